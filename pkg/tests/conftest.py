import sys
import time
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from hfgse.core import Buffer, Capability, Operand, ProcessSpec, SystemArchitecture  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES = []
SESSION = {}


def pytest_sessionstart(session):
    SESSION["start"] = time.perf_counter()


def pytest_collection_modifyitems(items):
    # acceptance runs last so its timing criterion sees the whole suite
    items.sort(key=lambda item: item.module.__name__.endswith("test_acceptance"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def transport_arch():
    return SystemArchitecture(
        [Operand("elec")],
        [Buffer("A", location="X"), Buffer("B", location="X")],
        [Capability("line", ProcessSpec.transport("elec"), "A", "B")])


@pytest.fixture
def chain_arch():
    """Crude injection, refining at 1.285, processed oil withdrawal, all at one buffer."""
    return SystemArchitecture(
        [Operand("crude"), Operand("oil")],
        [Buffer("R", location="X", kind="plant")],
        [Capability("inject", ProcessSpec.injection("crude"), "R", "R"),
         Capability("refine", ProcessSpec.transformation([("crude", 1.285)], [("oil", 1.0)]),
                    "R", "R"),
         Capability("withdraw", ProcessSpec.withdrawal("oil"), "R", "R")])


@pytest.fixture
def supply_arch():
    """Generator feeding a demand at one bus."""
    return SystemArchitecture(
        [Operand("elec")], [Buffer("bus", location="NY", kind="substation")],
        [Capability("gen", ProcessSpec.injection("elec"), "bus", "bus"),
         Capability("load", ProcessSpec.withdrawal("elec"), "bus", "bus")])
