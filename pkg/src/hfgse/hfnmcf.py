"""Hetero-functional network minimum cost flow program.

The time-indexed decision vector stacks, for k = 1..K+1::

    x[k] = [Q_B; Q_E; Q_SL; Q_EL; U-; U+; U_L-; U_L+]

The (K+1)-th block carries the final markings and the terminal firing pins
(U-[K+1] = 0, U_L-[K+1] = 0).  Equality rows are emitted block by block
(system-net transitions, durations, operand nets, synchronization,
boundary data, initial and final conditions), time-major within each block,
and every row carries a :class:`~hfgse.qp.RowLabel`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .petri import (EngineeringSystemNet, FiringSchedule, OperandNet, SyncMatrices,
                    simulate)
from .qp import QuadraticProgram, RowLabel, Solution, Status

BLOCKS = ("Q_B", "Q_E", "Q_SL", "Q_EL", "U-", "U+", "U_L-", "U_L+")
FIRING_BLOCKS = ("U-", "U+", "U_L-", "U_L+")


class AssemblyError(ValueError):
    pass


class CollapseError(ValueError):
    pass


@dataclass(frozen=True)
class DecisionLayout:
    sizes: dict
    horizon: int

    @property
    def offsets(self) -> dict:
        out, pos = {}, 0
        for name in BLOCKS:
            out[name] = pos
            pos += self.sizes[name]
        return out

    @property
    def step_length(self) -> int:
        return sum(self.sizes[b] for b in BLOCKS)

    @property
    def n_steps(self) -> int:
        return self.horizon + 1

    @property
    def total(self) -> int:
        return self.step_length * self.n_steps

    def start(self, block: str, k: int) -> int:
        """Column of the first entry of ``block`` at 1-based step ``k``."""
        if not 1 <= k <= self.n_steps:
            raise IndexError(f"step {k} outside 1..{self.n_steps}")
        return (k - 1) * self.step_length + self.offsets[block]

    def slice(self, block: str, k: int) -> slice:
        s = self.start(block, k)
        return slice(s, s + self.sizes[block])

    def series(self, x, block: str, steps=None) -> np.ndarray:
        steps = range(1, self.n_steps + 1) if steps is None else steps
        return np.vstack([x[self.slice(block, k)] for k in steps]) if len(steps) else \
            np.zeros((0, self.sizes[block]))


@dataclass(frozen=True)
class BoundaryData:
    """Exogenous firing data: ``D_Up U+[k] = C_Up[k]`` etc.; right sides are (K, rows)."""

    d_up: sp.spmatrix | None = None
    c_up: np.ndarray | None = None
    d_un: sp.spmatrix | None = None
    c_un: np.ndarray | None = None
    e_lp: sp.spmatrix | None = None
    f_lp: np.ndarray | None = None
    e_ln: sp.spmatrix | None = None
    f_ln: np.ndarray | None = None


@dataclass(frozen=True)
class HfnmcfInstance:
    esn: EngineeringSystemNet
    horizon: int
    operand_nets: tuple[OperandNet, ...] = ()
    sync: SyncMatrices | None = None
    f_quad: np.ndarray | None = None  # per-step diagonal over the x[k] layout
    f_lin: np.ndarray | None = None
    boundary: BoundaryData = field(default_factory=BoundaryData)
    c_b1: np.ndarray | None = None  # defaults to the nets' initial markings
    c_e1: np.ndarray | None = None
    c_sl1: np.ndarray | None = None
    c_bk: np.ndarray | None = None  # None leaves the final marking free
    c_ek: np.ndarray | None = None
    c_slk: np.ndarray | None = None
    capacity_rows: sp.spmatrix | None = None  # per-step D rows over the x[k] layout
    capacity_rhs: np.ndarray | None = None
    nonnegative_firings: bool = True
    device_models: tuple = ()

    def layout(self) -> DecisionLayout:
        n_sl = sum(net.n_places for net in self.operand_nets)
        n_el = sum(net.n_transitions for net in self.operand_nets)
        sizes = {"Q_B": self.esn.n_places, "Q_E": self.esn.n_transitions, "Q_SL": n_sl,
                 "Q_EL": n_el, "U-": self.esn.n_transitions, "U+": self.esn.n_transitions,
                 "U_L-": n_el, "U_L+": n_el}
        return DecisionLayout(sizes, int(self.horizon))


class _Rows:
    """COO accumulator for labelled constraint rows."""

    def __init__(self, n_cols):
        self.n_cols = n_cols
        self.r, self.c, self.v = [], [], []
        self.rhs, self.labels = [], []

    @property
    def n(self):
        return len(self.rhs)

    def add_block(self, m, col0, row0=None):
        m = sp.coo_matrix(m)
        row0 = self.n if row0 is None else row0
        self.r.extend((m.row + row0).tolist())
        self.c.extend((m.col + col0).tolist())
        self.v.extend(m.data.tolist())

    def add_entry(self, row, col, val):
        self.r.append(row)
        self.c.append(col)
        self.v.append(float(val))

    def new_rows(self, rhs, labels):
        self.rhs.extend(np.asarray(rhs, dtype=float).reshape(-1).tolist())
        self.labels.extend(labels)

    def matrix(self):
        return sp.csr_matrix((self.v, (self.r, self.c)), shape=(self.n, self.n_cols))


def _check(cond, block, msg):
    if not cond:
        raise AssemblyError(f"{block}: {msg}")


def _vec(v, n, block, default=None):
    if v is None:
        return default
    v = np.asarray(v, dtype=float).reshape(-1)
    _check(v.shape == (n,), block, f"expected length {n}, got {v.size}")
    return v


def _rhs(c, K, rows, block):
    c = np.asarray(c, dtype=float)
    if c.ndim == 1 and c.size == K * rows:
        c = c.reshape(K, rows)
    _check(c.shape == (K, rows), block, f"right-hand side must be ({K}, {rows}), got {c.shape}")
    return c


def _operand_offsets(nets, attr):
    out, pos = [], 0
    for net in nets:
        out.append(pos)
        pos += getattr(net, attr)
    return out


def assemble_hfnmcf(inst: HfnmcfInstance) -> QuadraticProgram:
    """Build the full program as a :class:`QuadraticProgram`."""
    if inst.device_models:
        raise NotImplementedError("device models g(X,Y), h(Y) are not supported")
    K = int(inst.horizon)
    _check(K >= 1, "horizon", "K must be at least 1")
    lay = inst.layout()
    esn, nets = inst.esn, inst.operand_nets
    dt = esn.dt
    n_s, n_e = esn.n_places, esn.n_transitions
    n_el = lay.sizes["U_L-"]
    n_sl = lay.sizes["Q_SL"]
    eq = _Rows(lay.total)
    st = lay.start

    # system-net place markings
    for k in range(1, K + 1):
        r0 = eq.n
        eq.new_rows(np.zeros(n_s), [RowLabel("place_balance", k, p) for p in esn.place_ids])
        for i in range(n_s):
            eq.add_entry(r0 + i, st("Q_B", k + 1) + i, -1.0)
            eq.add_entry(r0 + i, st("Q_B", k) + i, 1.0)
        eq.add_block(esn.m_plus * dt, st("U+", k), r0)
        eq.add_block(-esn.m_minus * dt, st("U-", k), r0)
    # system-net transition markings
    for k in range(1, K + 1):
        r0 = eq.n
        eq.new_rows(np.zeros(n_e), [RowLabel("transition_balance", k, t) for t in esn.transition_ids])
        for j in range(n_e):
            eq.add_entry(r0 + j, st("Q_E", k + 1) + j, -1.0)
            eq.add_entry(r0 + j, st("Q_E", k) + j, 1.0)
            eq.add_entry(r0 + j, st("U+", k) + j, -dt)
            eq.add_entry(r0 + j, st("U-", k) + j, dt)
    # transition durations
    for k in range(1, K + 1):
        for j, kd in enumerate(esn.durations):
            if k + kd > K:
                continue
            r = eq.n
            eq.new_rows([0.0], [RowLabel("firing_duration", k, esn.transition_ids[j])])
            eq.add_entry(r, st("U+", k + kd) + j, -1.0)
            eq.add_entry(r, st("U-", k) + j, 1.0)

    s_off = _operand_offsets(nets, "n_places")
    e_off = _operand_offsets(nets, "n_transitions")
    for k in range(1, K + 1):
        for net, so, eo in zip(nets, s_off, e_off):
            r0 = eq.n
            eq.new_rows(np.zeros(net.n_places), [RowLabel("operand_place_balance", k, p) for p in net.place_ids])
            for i in range(net.n_places):
                eq.add_entry(r0 + i, st("Q_SL", k + 1) + so + i, -1.0)
                eq.add_entry(r0 + i, st("Q_SL", k) + so + i, 1.0)
            eq.add_block(net.m_plus * net.dt, st("U_L+", k) + eo, r0)
            eq.add_block(-net.m_minus * net.dt, st("U_L-", k) + eo, r0)
    for k in range(1, K + 1):
        for net, eo in zip(nets, e_off):
            r0 = eq.n
            eq.new_rows(np.zeros(net.n_transitions),
                        [RowLabel("operand_transition_balance", k, t) for t in net.transition_ids])
            for j in range(net.n_transitions):
                eq.add_entry(r0 + j, st("Q_EL", k + 1) + eo + j, -1.0)
                eq.add_entry(r0 + j, st("Q_EL", k) + eo + j, 1.0)
                eq.add_entry(r0 + j, st("U_L+", k) + eo + j, -net.dt)
                eq.add_entry(r0 + j, st("U_L-", k) + eo + j, net.dt)
    for k in range(1, K + 1):
        for net, eo in zip(nets, e_off):
            for j, kd in enumerate(net.durations):
                if k + kd > K:
                    continue
                r = eq.n
                eq.new_rows([0.0], [RowLabel("operand_firing_duration", k, net.transition_ids[j])])
                eq.add_entry(r, st("U_L+", k + kd) + eo + j, -1.0)
                eq.add_entry(r, st("U_L-", k) + eo + j, 1.0)

    # synchronization
    sync = inst.sync if inst.sync is not None else SyncMatrices.empty(n_e)
    for eq_name, lam, ul, u in (("sync_plus", sync.lambda_plus, "U_L+", "U+"),
                                ("sync_minus", sync.lambda_minus, "U_L-", "U-")):
        if lam.shape[0] == 0:
            continue
        _check(lam.shape == (n_el, n_e), eq_name,
               f"synchronization matrix must be ({n_el}, {n_e}), got {lam.shape}")
        for k in range(1, K + 1):
            r0 = eq.n
            eq.new_rows(np.zeros(n_el), [RowLabel(eq_name, k, f"{ul}[{j}]") for j in range(n_el)])
            eq.add_block(sp.identity(n_el), st(ul, k), r0)
            eq.add_block(-lam, st(u, k), r0)

    # boundary conditions
    bd = inst.boundary
    for eq_name, pairs in (("esn_boundary", ((bd.d_up, bd.c_up, "U+", n_e), (bd.d_un, bd.c_un, "U-", n_e))),
                           ("operand_boundary", ((bd.e_lp, bd.f_lp, "U_L+", n_el),
                                   (bd.e_ln, bd.f_ln, "U_L-", n_el)))):
        for mat, rhs, block, width in pairs:
            if mat is None:
                continue
            mat = sp.csr_matrix(mat, dtype=float)
            _check(mat.shape[1] == width, eq_name,
                   f"{block} boundary matrix needs {width} columns, got {mat.shape[1]}")
            rhs = _rhs(rhs, K, mat.shape[0], eq_name)
            for k in range(1, K + 1):
                r0 = eq.n
                eq.new_rows(rhs[k - 1], [RowLabel(eq_name, k, f"{block}:{i}")
                                         for i in range(mat.shape[0])])
                eq.add_block(mat, st(block, k), r0)

    # initial conditions
    sl0 = np.concatenate([net.q_s0 for net in nets]) if nets else np.zeros(0)
    init = (("Q_B", _vec(inst.c_b1, n_s, "initial", esn.q_b0), esn.place_ids),
            ("Q_E", _vec(inst.c_e1, n_e, "initial", esn.q_e0), esn.transition_ids),
            ("Q_SL", _vec(inst.c_sl1, n_sl, "initial", sl0),
             tuple(p for net in nets for p in net.place_ids)))
    for block, val, ids in init:
        for i, v in enumerate(val):
            r = eq.n
            eq.new_rows([v], [RowLabel("initial", 1, ids[i])])
            eq.add_entry(r, st(block, 1) + i, 1.0)
    # final conditions
    fin = (("Q_B", _vec(inst.c_bk, n_s, "final"), esn.place_ids),
           ("Q_E", _vec(inst.c_ek, n_e, "final"), esn.transition_ids),
           ("Q_SL", _vec(inst.c_slk, n_sl, "final"), tuple(p for net in nets for p in net.place_ids)),
           ("U-", np.zeros(n_e), esn.transition_ids),
           ("U_L-", np.zeros(n_el), tuple(t for net in nets for t in net.transition_ids)))
    for block, val, ids in fin:
        if val is None:
            continue
        for i, v in enumerate(val):
            r = eq.n
            eq.new_rows([v], [RowLabel("final", K + 1, ids[i])])
            eq.add_entry(r, st(block, K + 1) + i, 1.0)

    # inequalities: capacities then firing nonnegativity
    ineq = _Rows(lay.total)
    if inst.capacity_rows is not None:
        cap = sp.csr_matrix(inst.capacity_rows, dtype=float)
        _check(cap.shape[1] == lay.step_length, "capacity",
               f"capacity rows need {lay.step_length} columns, got {cap.shape[1]}")
        rhs = _vec(inst.capacity_rhs, cap.shape[0], "capacity")
        _check(rhs is not None, "capacity", "capacity rows need a right-hand side")
        for k in range(1, K + 1):
            r0 = ineq.n
            ineq.new_rows(rhs, [RowLabel("capacity", k, f"cap:{i}") for i in range(cap.shape[0])])
            ineq.add_block(cap, st("Q_B", k), r0)
    if inst.nonnegative_firings:
        for k in range(1, K + 2):
            for block in FIRING_BLOCKS:
                for j in range(lay.sizes[block]):
                    r = ineq.n
                    ineq.new_rows([0.0], [RowLabel("nonnegative", k, f"{block}[{j}]")])
                    ineq.add_entry(r, st(block, k) + j, -1.0)

    # objective over k = 1..K
    f_quad = _vec(inst.f_quad, lay.step_length, "objective", np.zeros(lay.step_length))
    f_lin = _vec(inst.f_lin, lay.step_length, "objective", np.zeros(lay.step_length))
    _check((f_quad >= 0).all(), "objective", "F_QP diagonal must be nonnegative")
    zeros = np.zeros(lay.step_length)
    fq = np.concatenate([f_quad] * K + [zeros])
    fl = np.concatenate([f_lin] * K + [zeros])
    return QuadraticProgram(fq, fl, eq.matrix(), np.array(eq.rhs), ineq.matrix(),
                            np.array(ineq.rhs), eq.labels, ineq.labels)


class NetTrajectory(NamedTuple):
    q_places: np.ndarray  # (K+1, n_places)
    q_transitions: np.ndarray  # (K+1, n_transitions)
    u_minus: np.ndarray  # (K, n_transitions)
    u_plus: np.ndarray
    replay_residual: float


class HfnmcfTrajectories(NamedTuple):
    esn: NetTrajectory
    operand_nets: tuple
    replay_residual: float


def _replay(net, q_p, q_t, um, up):
    sched = FiringSchedule(np.maximum(um, 0.0), np.maximum(up, 0.0))
    # negative noise is clipped only for replay; it is included in the residual
    traj = simulate(net, sched, q_b0=q_p[0], q_e0=q_t[0])
    clip = max(np.abs(np.minimum(um, 0)).max(initial=0.0), np.abs(np.minimum(up, 0)).max(initial=0.0))
    res = max(np.abs(traj.q_b - q_p).max(initial=0.0), np.abs(traj.q_e - q_t).max(initial=0.0))
    weight = max([1.0] + [float(abs(m).max()) for m in (net.m_plus, net.m_minus) if m.nnz])
    return res + clip * net.dt * weight


def extract_trajectories(inst: HfnmcfInstance, solution: Solution) -> HfnmcfTrajectories:
    """Recover marking and firing trajectories and replay them through the nets."""
    if solution.status is not Status.OPTIMAL:
        raise ValueError(f"cannot extract trajectories from a {solution.status.value} solution")
    lay = inst.layout()
    K = lay.horizon
    x = np.asarray(solution.x)
    steps_q = range(1, K + 2)
    steps_u = range(1, K + 1)
    qb, qe = lay.series(x, "Q_B", steps_q), lay.series(x, "Q_E", steps_q)
    um, up = lay.series(x, "U-", steps_u), lay.series(x, "U+", steps_u)
    esn_traj = NetTrajectory(qb, qe, um, up, _replay(inst.esn, qb, qe, um, up))
    nets = []
    s_off = _operand_offsets(inst.operand_nets, "n_places")
    e_off = _operand_offsets(inst.operand_nets, "n_transitions")
    qsl, qel = lay.series(x, "Q_SL", steps_q), lay.series(x, "Q_EL", steps_q)
    ulm, ulp = lay.series(x, "U_L-", steps_u), lay.series(x, "U_L+", steps_u)
    for net, so, eo in zip(inst.operand_nets, s_off, e_off):
        ps = slice(so, so + net.n_places)
        ts = slice(eo, eo + net.n_transitions)
        t = NetTrajectory(qsl[:, ps], qel[:, ts], ulm[:, ts], ulp[:, ts], 0.0)
        nets.append(t._replace(replay_residual=_replay(net, t.q_places, t.q_transitions,
                                                        t.u_minus, t.u_plus)))
    worst = max([esn_traj.replay_residual] + [t.replay_residual for t in nets])
    return HfnmcfTrajectories(esn_traj, tuple(nets), worst)


@dataclass
class CollapseReport:
    """Outcome of the structural reduction check to a single-step estimator."""

    assumptions: dict  # name -> (ok, detail)
    checks: dict  # name -> (ok, detail)

    @property
    def ok(self) -> bool:
        return all(v[0] for v in self.assumptions.values()) and \
            all(v[0] for v in self.checks.values())

    @property
    def failed(self) -> list[str]:
        return [k for k, v in {**self.assumptions, **self.checks}.items() if not v[0]]


def check_theorem1_collapse(inst: HfnmcfInstance, *, strict=False) -> CollapseReport:
    """Verify that the assembled program reduces to a zero-error estimator.

    Assumptions checked on the instance: one time step, buffer markings
    pinned at zero, instantaneous transitions, no operand state.  Structural
    checks on the assembled rows: duration rows only identify U+ with U- at
    the same step, no operand-net or synchronization rows, the place balance
    is a pure incidence block, and boundary rows carry exactly the measurement
    pattern.  With ``strict=True`` any failed assumption raises
    :class:`CollapseError`.
    """
    esn = inst.esn
    a = {}
    a["single_step"] = (inst.horizon == 1, f"K={inst.horizon}")
    zero_b = lambda v: v is not None and np.allclose(v, 0.0)
    c_b1 = esn.q_b0 if inst.c_b1 is None else inst.c_b1
    pinned = zero_b(c_b1) and zero_b(inst.c_bk)
    a["zero_buffer_marking"] = (pinned, "" if pinned else "Q_B is not pinned to 0 at both ends")
    slow = [t for t, d in zip(esn.transition_ids, esn.durations) if d != 0]
    a["instantaneous_flow"] = (not slow, f"nonzero duration on {slow}" if slow else "")
    has_state = bool(inst.operand_nets) or (
        inst.sync is not None and (inst.sync.lambda_plus.shape[0] or inst.sync.lambda_minus.shape[0]))
    a["no_operand_state"] = (not has_state,
                             f"{len(inst.operand_nets)} operand net(s) attached" if has_state else "")
    if strict and not all(v[0] for v in a.values()):
        bad = [f"{k} ({v[1]})" for k, v in a.items() if not v[0]]
        raise CollapseError("collapse assumptions failed: " + "; ".join(bad))

    qp = assemble_hfnmcf(inst)
    lay = inst.layout()
    A = qp.a_eq.tocsr()
    labels = qp.eq_labels
    rows_of = lambda name: [i for i, lab in enumerate(labels) if lab.equation == name]
    c = {}

    # durations: each row is U-_j[k] - U+_j[k] = 0
    bad16 = []
    for i in rows_of("firing_duration"):
        row = A[i]
        cols = sorted(row.indices.tolist())
        k = labels[i].k
        j = esn.transition_ids.index(labels[i].entity)
        want = sorted([lay.start("U-", k) + j, lay.start("U+", k) + j])
        if cols != want or qp.b_eq[i] != 0:
            bad16.append(i)
    c["duration_rows_trivial"] = (not bad16, f"non-trivial duration rows {bad16}" if bad16 else "")

    extra = [n for n in ("operand_place_balance", "operand_transition_balance", "operand_firing_duration", "sync_plus", "sync_minus", "operand_boundary") if rows_of(n)]
    c["operand_rows_absent"] = (not extra, f"rows present for blocks {extra}" if extra else "")

    # place balance: U coefficients equal the incidence matrices; Q_B pinned to zero
    ok14, detail14 = True, ""
    r14 = rows_of("place_balance")
    if r14:
        sub = A[r14]
        for k in sorted({labels[i].k for i in r14}):
            ks = [n for n, i in enumerate(r14) if labels[i].k == k]
            blk = sub[ks]
            up = blk[:, lay.slice("U+", k)]
            um = blk[:, lay.slice("U-", k)]
            if (up != esn.m_plus * esn.dt).nnz or (um != -esn.m_minus * esn.dt).nnz:
                ok14, detail14 = False, f"U coefficients differ from the incidence at k={k}"
        pinned = set()
        for i in rows_of("initial") + rows_of("final"):
            cols = A[i].indices
            if len(cols) == 1 and qp.b_eq[i] == 0:
                pinned.add(int(cols[0]))
        qcols = [lay.start("Q_B", k) + j for k in range(1, lay.n_steps + 1)
                 for j in range(esn.n_places)]
        if not all(q in pinned for q in qcols):
            ok14, detail14 = False, "Q_B is not pinned to zero at every step"
    c["incidence_balance"] = (ok14, detail14)

    ok22, detail22 = True, ""
    bd = inst.boundary
    r22 = rows_of("esn_boundary")
    u_cols = set()
    for k in range(1, lay.n_steps + 1):
        u_cols.update(range(lay.start("U-", k), lay.start("U-", k) + 2 * esn.n_transitions))
    for i in r22:
        if not set(A[i].indices.tolist()) <= u_cols:
            ok22, detail22 = False, f"boundary row {i} touches non-firing columns"
    pos = 0
    for mat, rhs, block in ((bd.d_up, bd.c_up, "U+"), (bd.d_un, bd.c_un, "U-")):
        if mat is None:
            continue
        mat = sp.csr_matrix(mat)
        rhs = _rhs(rhs, inst.horizon, mat.shape[0], "esn_boundary")
        for k in range(1, inst.horizon + 1):
            rows = r22[pos:pos + mat.shape[0]]
            pos += mat.shape[0]
            blk = A[rows][:, lay.slice(block, k)]
            if (blk != mat).nnz or not np.array_equal(qp.b_eq[rows], rhs[k - 1]):
                ok22, detail22 = False, f"boundary block {block} differs at k={k}"
    if pos != len(r22):
        ok22, detail22 = False, "unexpected boundary rows"
    c["measurement_structure"] = (ok22, detail22)
    return CollapseReport(a, c)
