"""Hetero-functional graph domain types and incidence tensor construction.

Places of the engineering system net are (operand, buffer) pairs.  Matrix rows
use an operand-major convention::

    row = operand_index * n_buffers + buffer_index

and columns are capabilities in architecture order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp


class ArchitectureError(ValueError):
    """Raised when an architecture violates its structural rules."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid architecture: {lines}")


class ProcessKind(str, Enum):
    INJECTION = "injection"
    WITHDRAWAL = "withdrawal"
    TRANSPORT = "transport"
    STORAGE = "storage"
    TRANSFORMATION = "transformation"


class BufferKind(str, Enum):
    PLANT = "plant"
    TERMINAL = "terminal"
    PORT = "port"
    SUBSTATION = "substation"
    JUNCTION = "junction"


@dataclass(frozen=True)
class Operand:
    id: str
    name: str = ""
    unit: str = "GJ"


@dataclass(frozen=True)
class Buffer:
    id: str
    name: str = ""
    location: str = ""
    kind: BufferKind = BufferKind.JUNCTION

    def __post_init__(self):
        object.__setattr__(self, "kind", BufferKind(self.kind))


@dataclass(frozen=True)
class ProcessSpec:
    """What a capability does to operands.

    Coefficients are GJ of operand per GJ of reference output, so a
    single-output transformation carries an output coefficient of 1.
    """

    kind: ProcessKind
    inputs: tuple[tuple[str, float], ...] = ()
    outputs: tuple[tuple[str, float], ...] = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", ProcessKind(self.kind))
        object.__setattr__(self, "inputs", tuple((str(o), float(c)) for o, c in self.inputs))
        object.__setattr__(self, "outputs", tuple((str(o), float(c)) for o, c in self.outputs))

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        ins = "+".join(o for o, _ in self.inputs)
        outs = "+".join(o for o, _ in self.outputs)
        if self.kind is ProcessKind.TRANSFORMATION:
            return f"transform {ins}->{outs}"
        verb = {ProcessKind.INJECTION: "inject", ProcessKind.WITHDRAWAL: "withdraw",
                ProcessKind.TRANSPORT: "transport", ProcessKind.STORAGE: "store"}[self.kind]
        return f"{verb} {outs or ins}"

    @classmethod
    def injection(cls, operand, name=""):
        return cls(ProcessKind.INJECTION, (), ((operand, 1.0),), name)

    @classmethod
    def withdrawal(cls, operand, name=""):
        return cls(ProcessKind.WITHDRAWAL, ((operand, 1.0),), (), name)

    @classmethod
    def transport(cls, operand, name=""):
        return cls(ProcessKind.TRANSPORT, ((operand, 1.0),), ((operand, 1.0),), name)

    @classmethod
    def storage(cls, operand, name=""):
        return cls(ProcessKind.STORAGE, ((operand, 1.0),), ((operand, 1.0),), name)

    @classmethod
    def transformation(cls, inputs, outputs, name=""):
        return cls(ProcessKind.TRANSFORMATION, tuple(inputs), tuple(outputs), name)


@dataclass(frozen=True)
class Capability:
    id: str
    process: ProcessSpec
    origin: str
    destination: str
    duration: int = 0
    capacity: float | None = None
    name: str = ""


@dataclass(frozen=True)
class Violation:
    entity: str
    rule: str
    detail: str = ""

    def __str__(self):
        extra = f" ({self.detail})" if self.detail else ""
        return f"{self.entity}: {self.rule}{extra}"


@dataclass(frozen=True)
class SystemArchitecture:
    operands: tuple[Operand, ...] = ()
    buffers: tuple[Buffer, ...] = ()
    capabilities: tuple[Capability, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "operands", tuple(self.operands))
        object.__setattr__(self, "buffers", tuple(self.buffers))
        object.__setattr__(self, "capabilities", tuple(self.capabilities))
        object.__setattr__(self, "_index", {
            "operand": {o.id: i for i, o in enumerate(self.operands)},
            "buffer": {b.id: i for i, b in enumerate(self.buffers)},
            "capability": {c.id: i for i, c in enumerate(self.capabilities)},
        })

    @property
    def n_operands(self) -> int:
        return len(self.operands)

    @property
    def n_buffers(self) -> int:
        return len(self.buffers)

    @property
    def n_capabilities(self) -> int:
        return len(self.capabilities)

    @property
    def n_places(self) -> int:
        return self.n_operands * self.n_buffers

    def operand_index(self, operand_id: str) -> int:
        return self._index["operand"][operand_id]

    def buffer_index(self, buffer_id: str) -> int:
        return self._index["buffer"][buffer_id]

    def capability_index(self, capability_id: str) -> int:
        return self._index["capability"][capability_id]

    def place_index(self, operand_id: str, buffer_id: str) -> int:
        return self.operand_index(operand_id) * self.n_buffers + self.buffer_index(buffer_id)

    def place_labels(self) -> list[str]:
        return [f"{o.id}@{b.id}" for o in self.operands for b in self.buffers]

    def capability_ids(self) -> list[str]:
        return [c.id for c in self.capabilities]

    def buffer(self, buffer_id: str) -> Buffer:
        return self.buffers[self.buffer_index(buffer_id)]


class IncidenceEntry(NamedTuple):
    operand: int
    buffer: int
    capability: int
    weight: float


def _duplicates(ids: Iterable[str]) -> list[str]:
    seen, dup = set(), []
    for i in ids:
        if i in seen and i not in dup:
            dup.append(i)
        seen.add(i)
    return dup


def validate_architecture(arch: SystemArchitecture) -> list[Violation]:
    """Return every structural rule the architecture breaks (empty if none)."""
    out: list[Violation] = []
    for kind, items in (("operand", arch.operands), ("buffer", arch.buffers),
                        ("capability", arch.capabilities)):
        for dup in _duplicates(x.id for x in items):
            out.append(Violation(dup, "duplicate id", kind))

    operand_ids = {o.id for o in arch.operands}
    buffer_ids = {b.id for b in arch.buffers}

    for cap in arch.capabilities:
        proc = cap.process
        for b in (cap.origin, cap.destination):
            if b not in buffer_ids:
                out.append(Violation(cap.id, "unknown buffer", b))
        for o, c in proc.inputs + proc.outputs:
            if o not in operand_ids:
                out.append(Violation(cap.id, "unknown operand", o))
            if not math.isfinite(c) or c <= 0:
                out.append(Violation(cap.id, "coefficient must be positive", f"{o}={c}"))
        for side, pairs in (("inputs", proc.inputs), ("outputs", proc.outputs)):
            for dup in _duplicates(o for o, _ in pairs):
                out.append(Violation(cap.id, "duplicate operand in process", f"{side}: {dup}"))

        kind = proc.kind
        if kind is ProcessKind.INJECTION and (proc.inputs or not proc.outputs):
            out.append(Violation(cap.id, "injection has outputs only"))
        elif kind is ProcessKind.WITHDRAWAL and (proc.outputs or not proc.inputs):
            out.append(Violation(cap.id, "withdrawal has inputs only"))
        elif kind in (ProcessKind.TRANSPORT, ProcessKind.STORAGE):
            if len(proc.inputs) != 1 or len(proc.outputs) != 1:
                out.append(Violation(cap.id, f"{kind.value} needs one input and one output"))
            elif proc.inputs[0][0] != proc.outputs[0][0]:
                out.append(Violation(cap.id, f"{kind.value} must preserve operand",
                                     f"{proc.inputs[0][0]} -> {proc.outputs[0][0]}"))
            elif proc.inputs[0][1] != 1.0 or proc.outputs[0][1] != 1.0:
                out.append(Violation(cap.id, f"{kind.value} coefficients must be 1"))
        elif kind is ProcessKind.TRANSFORMATION and (not proc.inputs or not proc.outputs):
            out.append(Violation(cap.id, "transformation needs inputs and outputs"))

        if kind is not ProcessKind.TRANSPORT and cap.origin != cap.destination:
            out.append(Violation(cap.id, "origin must equal destination", kind.value))
        if not isinstance(cap.duration, (int, np.integer)) or cap.duration < 0:
            out.append(Violation(cap.id, "duration must be a nonnegative integer", str(cap.duration)))
        if cap.capacity is not None and not (math.isfinite(cap.capacity) and cap.capacity >= 0):
            out.append(Violation(cap.id, "capacity must be nonnegative", str(cap.capacity)))
    return out


def check_architecture(arch: SystemArchitecture) -> SystemArchitecture:
    violations = validate_architecture(arch)
    if violations:
        raise ArchitectureError(violations)
    return arch


def build_incidence_tensors(arch: SystemArchitecture):
    """Sparse entries of the negative and positive incidence tensors.

    Inputs are pulled from the origin buffer, outputs are injected into the
    destination buffer.
    """
    check_architecture(arch)
    negative, positive = [], []
    for psi, cap in enumerate(arch.capabilities):
        y_in = arch.buffer_index(cap.origin)
        y_out = arch.buffer_index(cap.destination)
        for o, c in cap.process.inputs:
            negative.append(IncidenceEntry(arch.operand_index(o), y_in, psi, c))
        for o, c in cap.process.outputs:
            positive.append(IncidenceEntry(arch.operand_index(o), y_out, psi, c))
    return negative, positive


def matricize(entries: Sequence[IncidenceEntry], n_operands: int, n_buffers: int,
              n_capabilities: int) -> sp.csc_matrix:
    """Flatten tensor entries into a (n_operands*n_buffers, n_capabilities) matrix."""
    n_rows = n_operands * n_buffers
    rows, cols, vals = [], [], []
    seen = set()
    for e in entries:
        if not (0 <= e.operand < n_operands and 0 <= e.buffer < n_buffers
                and 0 <= e.capability < n_capabilities):
            raise IndexError(f"tensor entry out of range: {e}")
        if not e.weight > 0:
            raise ValueError(f"tensor weights must be positive: {e}")
        r = e.operand * n_buffers + e.buffer
        if (r, e.capability) in seen:
            raise ValueError(f"duplicate tensor entry at row {r}, capability {e.capability}")
        seen.add((r, e.capability))
        rows.append(r)
        cols.append(e.capability)
        vals.append(float(e.weight))
    m = sp.csc_matrix((vals, (rows, cols)), shape=(n_rows, n_capabilities), dtype=float)
    m.sort_indices()
    return m


def entries_from_matrix(m, n_buffers: int) -> list[IncidenceEntry]:
    """Inverse of :func:`matricize`, ordered by (capability, row)."""
    m = sp.csc_matrix(m)
    m.sort_indices()
    out = []
    for col in range(m.shape[1]):
        for idx in range(m.indptr[col], m.indptr[col + 1]):
            r = int(m.indices[idx])
            out.append(IncidenceEntry(r // n_buffers, r % n_buffers, col, float(m.data[idx])))
    return out


def incidence_matrices(arch: SystemArchitecture):
    """Return ``(M_plus, M_minus)`` for the architecture."""
    negative, positive = build_incidence_tensors(arch)
    shape = (arch.n_operands, arch.n_buffers, arch.n_capabilities)
    return matricize(positive, *shape), matricize(negative, *shape)
