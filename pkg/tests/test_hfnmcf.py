import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hfgse.core import Buffer, Capability, Operand, ProcessSpec, SystemArchitecture
from hfgse.hfnmcf import (AssemblyError, BoundaryData, CollapseError, HfnmcfInstance,
                          assemble_hfnmcf, check_theorem1_collapse, extract_trajectories)
from hfgse.petri import EngineeringSystemNet, FiringSchedule, OperandNet, SyncMatrices, simulate
from hfgse.qp import Solution, Status, solve_qp


def grid_arch(line_duration=0):
    """Generator at A, line A->B, load at B."""
    return SystemArchitecture(
        [Operand("elec")], [Buffer("A", location="X"), Buffer("B", location="X")],
        [Capability("gen", ProcessSpec.injection("elec"), "A", "A"),
         Capability("line", ProcessSpec.transport("elec"), "A", "B", duration=line_duration),
         Capability("load", ProcessSpec.withdrawal("elec"), "B", "B")])


def grid_instance(K=1, demand=1.0, line_duration=0, **kw):
    esn = EngineeringSystemNet.from_architecture(grid_arch(line_duration))
    lay_len = esn.n_places + esn.n_transitions + 2 * esn.n_transitions
    f_quad = np.zeros(lay_len)
    f_quad[esn.n_places + esn.n_transitions:] = 1e-3
    kw.setdefault("c_bk", np.zeros(2))
    return HfnmcfInstance(esn, K, f_quad=f_quad,
                          boundary=BoundaryData(d_un=[[0.0, 0.0, 1.0]], c_un=np.full(K, demand)),
                          **kw)


def _solve(inst):
    qp = assemble_hfnmcf(inst)
    sol = solve_qp(qp)
    assert sol.ok, sol.message
    return qp, sol


def test_demand_routes_through_chain():
    inst = grid_instance()
    _, sol = _solve(inst)
    lay = inst.layout()
    np.testing.assert_allclose(lay.series(sol.x, "U-", [1])[0], [1.0, 1.0, 1.0], atol=1e-9)
    np.testing.assert_allclose(lay.series(sol.x, "U+", [1])[0], [1.0, 1.0, 1.0], atol=1e-9)
    traj = extract_trajectories(inst, sol)
    assert traj.esn.q_places.shape == (2, 2)
    assert traj.replay_residual <= 1e-9
    replay = simulate(inst.esn, FiringSchedule(traj.esn.u_minus.clip(0), traj.esn.u_plus.clip(0)))
    np.testing.assert_allclose(replay.q_b, traj.esn.q_places, atol=1e-9)


def test_zero_data_gives_zero_solution():
    esn = EngineeringSystemNet.from_architecture(grid_arch())
    inst = HfnmcfInstance(esn, 3, f_quad=np.ones(esn.n_places + 3 * esn.n_transitions))
    _, sol = _solve(inst)
    np.testing.assert_allclose(sol.x, 0.0, atol=1e-12)


def test_zero_objective_gives_feasible_point():
    inst = dataclasses.replace(grid_instance(K=2), f_quad=None)
    qp, sol = _solve(inst)
    assert sol.residuals.primal <= 1e-8


def test_row_counts_match_formulas():
    rng = np.random.default_rng(0)
    for _ in range(20):
        K = int(rng.integers(1, 6))
        n_buf, n_cap = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        caps = [Capability(f"t{j}", ProcessSpec.transport("e"), f"b{rng.integers(n_buf)}",
                           f"b{rng.integers(n_buf)}", duration=int(rng.integers(0, K + 2)))
                for j in range(n_cap)]
        arch = SystemArchitecture([Operand("e")], [Buffer(f"b{i}") for i in range(n_buf)], caps)
        esn = EngineeringSystemNet.from_architecture(arch)
        qp = assemble_hfnmcf(HfnmcfInstance(esn, K))
        count = lambda name: sum(lab.equation == name for lab in qp.eq_labels)
        assert count("place_balance") == arch.n_places * K
        assert count("transition_balance") == n_cap * K
        assert count("firing_duration") == sum(max(0, K - c.duration) for c in caps)
        assert qp.n == (K + 1) * (arch.n_places + 3 * n_cap)


def test_duration_rows_link_lagged_firings():
    inst = grid_instance(K=3, line_duration=1)
    qp = assemble_hfnmcf(inst)
    lay = inst.layout()
    line = 1
    rows = [i for i, lab in enumerate(qp.eq_labels) if lab.equation == "firing_duration" and lab.entity == "line"]
    assert [qp.eq_labels[i].k for i in rows] == [1, 2]
    for i in rows:
        k = qp.eq_labels[i].k
        row = qp.a_eq[i].toarray()[0]
        want = np.zeros(qp.n)
        want[lay.start("U-", k) + line] = 1.0
        want[lay.start("U+", k + 1) + line] = -1.0
        np.testing.assert_array_equal(row, want)


def test_lagged_line_delivers_one_step_late():
    inst = grid_instance(K=3, line_duration=1, c_bk=None)
    _, sol = _solve(inst)
    traj = extract_trajectories(inst, sol)
    np.testing.assert_allclose(traj.esn.u_plus[1:, 1], traj.esn.u_minus[:-1, 1], atol=1e-9)
    assert traj.replay_residual <= 1e-7


def test_final_block_pins_terminal_firings():
    qp = assemble_hfnmcf(grid_instance(K=2))
    final = [lab for lab in qp.eq_labels if lab.equation == "final"]
    assert {lab.k for lab in final} == {3}
    # final Q_B pins plus U- = 0 on every capability
    assert [lab.entity for lab in final] == ["elec@A", "elec@B", "gen", "line", "load"]


def test_trivial_horizon_trajectory_length():
    inst = grid_instance(K=1)
    _, sol = _solve(inst)
    traj = extract_trajectories(inst, sol)
    assert traj.esn.q_places.shape[0] == 2 and traj.esn.u_minus.shape[0] == 1


@given(st.integers(0, 2**32 - 1))
def test_random_feasible_instances_replay(seed):
    rng = np.random.default_rng(seed)
    K, n_buf, n_cap = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
    caps = [Capability(f"t{j}", ProcessSpec.transport("e"), f"b{rng.integers(n_buf)}",
                       f"b{rng.integers(n_buf)}", duration=int(rng.integers(0, 3)))
            for j in range(n_cap)]
    arch = SystemArchitecture([Operand("e")], [Buffer(f"b{i}") for i in range(n_buf)], caps)
    esn = EngineeringSystemNet.from_architecture(arch, q_b0=rng.uniform(0, 5, n_buf))
    step = n_buf + 3 * n_cap
    inst = HfnmcfInstance(esn, K, f_quad=rng.uniform(0.1, 2, step), f_lin=rng.normal(0, 1, step),
                          boundary=BoundaryData(d_un=np.eye(n_cap)[:1],
                                                c_un=rng.uniform(0, 2, (K, 1))))
    _, sol = _solve(inst)
    traj = extract_trajectories(inst, sol)
    assert traj.replay_residual <= 1e-7


def _refinery_instance(K=2, sync=True):
    arch = SystemArchitecture(
        [Operand("crude"), Operand("oil")], [Buffer("R")],
        [Capability("inject", ProcessSpec.injection("crude"), "R", "R"),
         Capability("refine", ProcessSpec.transformation([("crude", 1.285)], [("oil", 1.0)]),
                    "R", "R"),
         Capability("withdraw", ProcessSpec.withdrawal("oil"), "R", "R")])
    esn = EngineeringSystemNet.from_architecture(arch)
    net = OperandNet("oil", m_plus=[[0.0], [1.0]], m_minus=[[1.0], [0.0]], q_s0=[float(K), 0.0])
    lam = SyncMatrices([[0.0, 1.0, 0.0]], [[0.0, 1.0, 0.0]]) if sync else None
    step = esn.n_places + 3 * esn.n_transitions + net.n_places + 3 * net.n_transitions
    f_quad = np.full(step, 1e-3)
    return HfnmcfInstance(esn, K, (net,), lam, f_quad=f_quad,
                          boundary=BoundaryData(d_un=[[0.0, 0.0, 1.0]], c_un=np.ones(K)),
                          c_bk=np.zeros(2))


def test_operand_net_follows_synchronized_firings():
    inst = _refinery_instance()
    _, sol = _solve(inst)
    traj = extract_trajectories(inst, sol)
    np.testing.assert_allclose(traj.operand_nets[0].u_minus[:, 0], traj.esn.u_minus[:, 1], atol=1e-9)
    np.testing.assert_allclose(traj.operand_nets[0].q_places[-1], [0.0, 2.0], atol=1e-8)
    np.testing.assert_allclose(traj.esn.u_minus[:, 0], 1.285, atol=1e-8)
    assert traj.replay_residual <= 1e-7


def test_assembly_errors_name_the_block():
    inst = grid_instance(capacity_rows=np.ones((1, 3)), capacity_rhs=[1.0])
    with pytest.raises(AssemblyError, match="^capacity:"):
        assemble_hfnmcf(inst)
    inst = dataclasses.replace(_refinery_instance(), sync=SyncMatrices([[1.0, 0.0]], [[1.0, 0.0]]))
    with pytest.raises(AssemblyError, match="^sync_plus:"):
        assemble_hfnmcf(inst)
    inst = dataclasses.replace(grid_instance(K=2),
                               boundary=BoundaryData(d_un=[[0.0, 0.0, 1.0]], c_un=np.ones(3)))
    with pytest.raises(AssemblyError, match="^esn_boundary:"):
        assemble_hfnmcf(inst)
    with pytest.raises(AssemblyError, match="horizon"):
        assemble_hfnmcf(grid_instance(K=0))


def test_capacity_rows_bind():
    inst = grid_instance(demand=2.0)
    lay = inst.layout()
    cap = np.zeros((1, lay.step_length))
    cap[0, lay.offsets["U-"] + 1] = 1.0
    tight = dataclasses.replace(inst, capacity_rows=cap, capacity_rhs=[1.0])
    assert solve_qp(assemble_hfnmcf(tight)).status is Status.INFEASIBLE
    inst = dataclasses.replace(tight, capacity_rhs=[3.0])
    _, sol = _solve(inst)
    assert lay.series(sol.x, "U-", [1])[0, 1] == pytest.approx(2.0, abs=1e-9)


def test_device_models_are_not_supported():
    inst = grid_instance(device_models=("g",))
    with pytest.raises(NotImplementedError):
        assemble_hfnmcf(inst)


def test_non_optimal_solution_is_rejected():
    inst = grid_instance()
    n = inst.layout().total
    bad = Solution(np.zeros(n), np.zeros(0), np.zeros(0), Status.INFEASIBLE)
    with pytest.raises(ValueError, match="infeasible"):
        extract_trajectories(inst, bad)


def _collapse_instance(**kw):
    return grid_instance(K=kw.pop("K", 1), c_b1=np.zeros(2), **kw)


def test_collapse_passes_on_electric_fixture():
    report = check_theorem1_collapse(_collapse_instance())
    assert report.ok, report.failed


@pytest.mark.parametrize("kw,flag", [
    ({"line_duration": 1}, "instantaneous_flow"),
    ({"K": 2}, "single_step"),
    ({"c_bk": None}, "zero_buffer_marking"),
])
def test_collapse_flags_broken_assumptions(kw, flag):
    report = check_theorem1_collapse(_collapse_instance(**kw))
    assert flag in report.failed
    with pytest.raises(CollapseError, match=flag):
        check_theorem1_collapse(_collapse_instance(**kw), strict=True)


def test_collapse_flags_operand_state():
    inst = dataclasses.replace(_refinery_instance(K=1), c_b1=np.zeros(2))
    report = check_theorem1_collapse(inst)
    assert "no_operand_state" in report.failed
    assert "operand_rows_absent" in report.failed
