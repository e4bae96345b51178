import numpy as np
import pytest
from hypothesis import given, strategies as st

from hfgse.core import (ArchitectureError, Buffer, Capability, IncidenceEntry, Operand,
                        ProcessKind, ProcessSpec, SystemArchitecture, build_incidence_tensors,
                        entries_from_matrix, incidence_matrices, matricize, validate_architecture)
from hfgse.io import make_mini_ames, parse_instance

from oracles import dense_incidence


def test_transport_tensors(transport_arch):
    neg, pos = build_incidence_tensors(transport_arch)
    assert neg == [IncidenceEntry(0, 0, 0, 1.0)]
    assert pos == [IncidenceEntry(0, 1, 0, 1.0)]
    m_plus, m_minus = incidence_matrices(transport_arch)
    assert m_minus.toarray().tolist() == [[1.0], [0.0]]
    assert m_plus.toarray().tolist() == [[0.0], [1.0]]


def test_coal_generation_weights():
    arch = SystemArchitecture(
        [Operand("coal"), Operand("elec")], [Buffer("P")],
        [Capability("gen", ProcessSpec.transformation([("coal", 3.102)], [("elec", 1.0)]), "P", "P")])
    neg, pos = build_incidence_tensors(arch)
    assert neg == [IncidenceEntry(0, 0, 0, 3.102)]
    assert pos == [IncidenceEntry(1, 0, 0, 1.0)]
    m_plus, m_minus = incidence_matrices(arch)
    assert m_minus[0, 0] == 3.102 and m_plus[1, 0] == 1.0
    assert m_minus.nnz == 1 and m_plus.nnz == 1


def test_chain_balances_at_interior_buffer(chain_arch):
    m_plus, m_minus = incidence_matrices(chain_arch)
    u_inject = 5.0
    u = np.array([u_inject, u_inject / 1.285, u_inject / 1.285])
    np.testing.assert_allclose((m_plus - m_minus) @ u, 0.0, atol=1e-12)


def _random_arch(rng, n_op=4, n_buf=3, n_cap=5):
    ops = [Operand(f"o{i}") for i in range(n_op)]
    bufs = [Buffer(f"b{i}", location=f"r{i % 2}") for i in range(n_buf)]
    caps = []
    for c in range(n_cap):
        kind = rng.choice(["injection", "withdrawal", "transport", "transformation"])
        b1, b2 = (f"b{j}" for j in rng.integers(0, n_buf, 2))
        o1, o2 = rng.choice(n_op, 2, replace=False)
        if kind == "injection":
            caps.append(Capability(f"c{c}", ProcessSpec.injection(f"o{o1}"), b1, b1))
        elif kind == "withdrawal":
            caps.append(Capability(f"c{c}", ProcessSpec.withdrawal(f"o{o1}"), b1, b1))
        elif kind == "transport":
            caps.append(Capability(f"c{c}", ProcessSpec.transport(f"o{o1}"), b1, b2))
        else:
            w = float(np.round(rng.uniform(0.5, 4.0), 3))
            caps.append(Capability(f"c{c}", ProcessSpec.transformation(
                [(f"o{o1}", w)], [(f"o{o2}", 1.0)]), b1, b1))
    return SystemArchitecture(ops, bufs, caps)


def test_matricize_matches_dense_triple_loop():
    rng = np.random.default_rng(7)
    for _ in range(25):
        arch = _random_arch(rng)
        m_plus, m_minus = incidence_matrices(arch)
        plus, minus = dense_incidence(arch)
        np.testing.assert_array_equal(m_plus.toarray(), plus)
        np.testing.assert_array_equal(m_minus.toarray(), minus)


@given(st.integers(0, 2**32 - 1))
def test_matricize_roundtrip(seed):
    rng = np.random.default_rng(seed)
    arch = _random_arch(rng, int(rng.integers(2, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 7)))
    neg, pos = build_incidence_tensors(arch)
    shape = (arch.n_operands, arch.n_buffers, arch.n_capabilities)
    for entries in (neg, pos):
        m = matricize(entries, *shape)
        assert sorted(entries_from_matrix(m, arch.n_buffers)) == sorted(entries)


@given(st.integers(0, 2**32 - 1))
def test_every_capability_has_entries(seed):
    arch = _random_arch(np.random.default_rng(seed))
    m_plus, m_minus = incidence_matrices(arch)
    for psi, cap in enumerate(arch.capabilities):
        n_pos, n_neg = m_plus[:, psi].nnz, m_minus[:, psi].nnz
        assert n_pos + n_neg >= 1
        if cap.process.kind is ProcessKind.INJECTION:
            assert n_neg == 0
        if cap.process.kind is ProcessKind.WITHDRAWAL:
            assert n_pos == 0
        if cap.process.kind is ProcessKind.TRANSFORMATION:
            ratio = m_minus[:, psi].sum() / m_plus[:, psi].sum()
            assert ratio == pytest.approx(cap.process.inputs[0][1] / cap.process.outputs[0][1])


@given(st.integers(1, 4), st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_pure_transport_columns_sum_to_zero(n_op, n_buf, seed):
    rng = np.random.default_rng(seed)
    ops = [Operand(f"o{i}") for i in range(n_op)]
    bufs = [Buffer(f"b{i}") for i in range(n_buf)]
    caps = [Capability(f"t{j}", ProcessSpec.transport(f"o{rng.integers(n_op)}"),
                       f"b{rng.integers(n_buf)}", f"b{rng.integers(n_buf)}") for j in range(6)]
    m_plus, m_minus = incidence_matrices(SystemArchitecture(ops, bufs, caps))
    M = (m_plus - m_minus).toarray()
    for i in range(n_op):
        np.testing.assert_allclose(M[i * n_buf:(i + 1) * n_buf].sum(axis=0), 0.0)


def test_mini_ames_is_valid():
    for rc in (1, 2):
        inst = parse_instance(make_mini_ames(rc))
        assert validate_architecture(inst.arch) == []


def _rules(arch):
    return {(v.entity, v.rule) for v in validate_architecture(arch)}


def test_zero_coefficient_is_reported():
    arch = SystemArchitecture(
        [Operand("a"), Operand("b")], [Buffer("P")],
        [Capability("t", ProcessSpec.transformation([("a", 0.0)], [("b", 1.0)]), "P", "P")])
    assert ("t", "coefficient must be positive") in _rules(arch)


def test_transport_must_preserve_operand():
    arch = SystemArchitecture(
        [Operand("a"), Operand("b")], [Buffer("P"), Buffer("Q")],
        [Capability("t", ProcessSpec(ProcessKind.TRANSPORT, (("a", 1.0),), (("b", 1.0),)), "P", "Q")])
    assert ("t", "transport must preserve operand") in _rules(arch)


def test_structural_rules():
    arch = SystemArchitecture(
        [Operand("a"), Operand("a")], [Buffer("P"), Buffer("Q")],
        [Capability("i", ProcessSpec(ProcessKind.INJECTION, (("a", 1.0),), (("a", 1.0),)), "P", "P"),
         Capability("w", ProcessSpec(ProcessKind.WITHDRAWAL, (), (("a", 1.0),)), "P", "P"),
         Capability("s", ProcessSpec.storage("a"), "P", "Q"),
         Capability("x", ProcessSpec.transport("zz"), "P", "nowhere", duration=-1, capacity=-2.0),
         Capability("t", ProcessSpec(ProcessKind.TRANSFORMATION, (), (("a", 1.0),)), "P", "P")])
    rules = _rules(arch)
    assert ("a", "duplicate id") in rules
    assert ("i", "injection has outputs only") in rules
    assert ("w", "withdrawal has inputs only") in rules
    assert ("s", "origin must equal destination") in rules
    assert ("x", "unknown buffer") in rules
    assert ("x", "unknown operand") in rules
    assert ("x", "duration must be a nonnegative integer") in rules
    assert ("x", "capacity must be nonnegative") in rules
    assert ("t", "transformation needs inputs and outputs") in rules


def test_build_rejects_invalid_architecture():
    arch = SystemArchitecture([Operand("a")], [Buffer("P")],
                              [Capability("bad", ProcessSpec.transport("a"), "P", "missing")])
    with pytest.raises(ArchitectureError, match="bad: unknown buffer"):
        build_incidence_tensors(arch)


def test_matricize_rejects_duplicates_and_bad_entries():
    with pytest.raises(ValueError, match="duplicate"):
        matricize([IncidenceEntry(0, 0, 0, 1.0), IncidenceEntry(0, 0, 0, 2.0)], 1, 1, 1)
    with pytest.raises(IndexError):
        matricize([IncidenceEntry(1, 0, 0, 1.0)], 1, 1, 1)
    with pytest.raises(ValueError, match="positive"):
        matricize([IncidenceEntry(0, 0, 0, 0.0)], 1, 1, 1)


def test_place_index_is_operand_major():
    arch = SystemArchitecture([Operand("a"), Operand("b")], [Buffer("x"), Buffer("y"), Buffer("z")])
    assert arch.place_index("b", "y") == 4
    assert arch.place_labels()[4] == "b@y"


def test_process_labels():
    assert ProcessSpec.injection("coal").label == "inject coal"
    assert ProcessSpec.transformation([("coal", 3.1)], [("elec", 1)]).label == "transform coal->elec"
    assert ProcessSpec.transport("gas", name="pipeline").label == "pipeline"
