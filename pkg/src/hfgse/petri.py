"""Discrete-time dynamics of the engineering system net and operand nets.

Markings evolve as::

    Q_B[k+1] = Q_B[k] + (M+ U+[k] - M- U-[k]) dT
    Q_E[k+1] = Q_E[k] + (U-[k] - U+[k]) dT

Negative markings and transition-duration breaches are reported as
violations rather than rejected, so infeasible schedules can be replayed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .core import SystemArchitecture, incidence_matrices


@dataclass(frozen=True)
class MarkingViolation:
    kind: str  # "negative_place" | "negative_transition" | "duration"
    step: int  # 1-based time index
    index: int
    value: float
    entity: str = ""

    def __str__(self):
        return f"{self.kind} at k={self.step}: {self.entity or self.index} ({self.value:g})"


def _as_sparse(m):
    m = sp.csc_matrix(m, dtype=float)
    m.sort_indices()
    return m


def _labels(labels, n, prefix):
    return tuple(labels) if labels is not None else tuple(f"{prefix}{i}" for i in range(n))


@dataclass(frozen=True)
class EngineeringSystemNet:
    m_plus: sp.csc_matrix
    m_minus: sp.csc_matrix
    durations: np.ndarray
    dt: float = 1.0
    q_b0: np.ndarray | None = None
    q_e0: np.ndarray | None = None
    place_ids: tuple[str, ...] | None = None
    transition_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        mp, mm = _as_sparse(self.m_plus), _as_sparse(self.m_minus)
        if mp.shape != mm.shape:
            raise ValueError(f"M+ {mp.shape} and M- {mm.shape} differ in shape")
        n_s, n_e = mp.shape
        dur = np.asarray(self.durations, dtype=int).reshape(-1)
        if dur.shape != (n_e,):
            raise ValueError(f"expected {n_e} durations, got {dur.shape[0]}")
        if (dur < 0).any():
            raise ValueError("durations must be nonnegative")
        q_b0 = np.zeros(n_s) if self.q_b0 is None else np.asarray(self.q_b0, dtype=float)
        q_e0 = np.zeros(n_e) if self.q_e0 is None else np.asarray(self.q_e0, dtype=float)
        if q_b0.shape != (n_s,) or q_e0.shape != (n_e,):
            raise ValueError("initial markings do not match the net size")
        if (q_b0 < 0).any() or (q_e0 < 0).any():
            raise ValueError("initial markings must be nonnegative")
        object.__setattr__(self, "m_plus", mp)
        object.__setattr__(self, "m_minus", mm)
        object.__setattr__(self, "durations", dur)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "q_b0", q_b0)
        object.__setattr__(self, "q_e0", q_e0)
        object.__setattr__(self, "place_ids", _labels(self.place_ids, n_s, "s"))
        object.__setattr__(self, "transition_ids", _labels(self.transition_ids, n_e, "e"))

    @property
    def n_places(self) -> int:
        return self.m_plus.shape[0]

    @property
    def n_transitions(self) -> int:
        return self.m_plus.shape[1]

    @classmethod
    def from_architecture(cls, arch: SystemArchitecture, dt=1.0, q_b0=None, q_e0=None):
        m_plus, m_minus = incidence_matrices(arch)
        return cls(m_plus, m_minus, [c.duration for c in arch.capabilities], dt, q_b0, q_e0,
                   tuple(arch.place_labels()), tuple(arch.capability_ids()))


@dataclass(frozen=True)
class OperandNet:
    """Petri net tracking the internal state of one operand."""

    operand: str
    m_plus: sp.csc_matrix
    m_minus: sp.csc_matrix
    durations: np.ndarray = None
    q_s0: np.ndarray | None = None
    q_e0: np.ndarray | None = None
    dt: float = 1.0

    def __post_init__(self):
        mp, mm = _as_sparse(self.m_plus), _as_sparse(self.m_minus)
        if mp.shape != mm.shape:
            raise ValueError(f"operand net {self.operand}: M+ and M- differ in shape")
        n_s, n_e = mp.shape
        dur = np.zeros(n_e, dtype=int) if self.durations is None else \
            np.asarray(self.durations, dtype=int).reshape(-1)
        if dur.shape != (n_e,) or (dur < 0).any():
            raise ValueError(f"operand net {self.operand}: bad durations")
        q_s0 = np.zeros(n_s) if self.q_s0 is None else np.asarray(self.q_s0, dtype=float)
        q_e0 = np.zeros(n_e) if self.q_e0 is None else np.asarray(self.q_e0, dtype=float)
        if q_s0.shape != (n_s,) or q_e0.shape != (n_e,):
            raise ValueError(f"operand net {self.operand}: initial markings do not match")
        for name, val in (("m_plus", mp), ("m_minus", mm), ("durations", dur),
                          ("q_s0", q_s0), ("q_e0", q_e0), ("dt", float(self.dt))):
            object.__setattr__(self, name, val)

    @property
    def n_places(self) -> int:
        return self.m_plus.shape[0]

    @property
    def n_transitions(self) -> int:
        return self.m_plus.shape[1]

    # uniform attribute names shared with EngineeringSystemNet
    @property
    def q_b0(self):
        return self.q_s0

    @property
    def place_ids(self):
        return tuple(f"{self.operand}:s{i}" for i in range(self.n_places))

    @property
    def transition_ids(self):
        return tuple(f"{self.operand}:e{i}" for i in range(self.n_transitions))


@dataclass(frozen=True)
class FiringSchedule:
    """Input and output firing vectors, one row per time step."""

    u_minus: np.ndarray
    u_plus: np.ndarray

    def __post_init__(self):
        um = np.atleast_2d(np.asarray(self.u_minus, dtype=float))
        up = np.atleast_2d(np.asarray(self.u_plus, dtype=float))
        if um.size == 0:
            um = um.reshape(0, up.shape[1] if up.ndim == 2 else 0)
        if up.size == 0:
            up = up.reshape(0, um.shape[1])
        if um.shape != up.shape:
            raise ValueError(f"u_minus {um.shape} and u_plus {up.shape} differ in shape")
        if (um < 0).any() or (up < 0).any():
            raise ValueError("firing vectors must be nonnegative")
        object.__setattr__(self, "u_minus", um)
        object.__setattr__(self, "u_plus", up)

    @property
    def horizon(self) -> int:
        return self.u_minus.shape[0]


@dataclass(frozen=True)
class SyncMatrices:
    """0/1 couplings from system-net firings to stacked operand-net firings."""

    lambda_plus: sp.csc_matrix
    lambda_minus: sp.csc_matrix

    def __post_init__(self):
        lp, lm = _as_sparse(self.lambda_plus), _as_sparse(self.lambda_minus)
        for m in (lp, lm):
            if m.nnz and not np.isin(m.data, (0.0, 1.0)).all():
                raise ValueError("synchronization matrices must be 0/1")
        object.__setattr__(self, "lambda_plus", lp)
        object.__setattr__(self, "lambda_minus", lm)

    @classmethod
    def empty(cls, n_transitions: int):
        z = sp.csc_matrix((0, n_transitions))
        return cls(z, z)


class StepResult(NamedTuple):
    q_b: np.ndarray
    q_e: np.ndarray
    violations: list


class Trajectory(NamedTuple):
    q_b: np.ndarray  # (K+1, n_places)
    q_e: np.ndarray  # (K+1, n_transitions)
    violations: list


def _step(m_plus, m_minus, dt, q_b, q_e, u_minus, u_plus, step, place_ids, transition_ids, tol):
    q_b = np.asarray(q_b, dtype=float)
    q_e = np.asarray(q_e, dtype=float)
    u_minus = np.asarray(u_minus, dtype=float)
    u_plus = np.asarray(u_plus, dtype=float)
    n_s, n_e = m_plus.shape
    if q_b.shape != (n_s,) or q_e.shape != (n_e,) or u_minus.shape != (n_e,) \
            or u_plus.shape != (n_e,):
        raise ValueError("vector lengths do not match the net")
    q_b_next = q_b + (m_plus @ u_plus - m_minus @ u_minus) * dt
    q_e_next = q_e + (u_minus - u_plus) * dt
    violations = []
    for i in np.flatnonzero(q_b_next < -tol):
        violations.append(MarkingViolation("negative_place", step + 1, int(i),
                                           float(q_b_next[i]), place_ids[i] if place_ids else ""))
    for i in np.flatnonzero(q_e_next < -tol):
        violations.append(MarkingViolation("negative_transition", step + 1, int(i),
                                           float(q_e_next[i]),
                                           transition_ids[i] if transition_ids else ""))
    return StepResult(q_b_next, q_e_next, violations)


def step_esn(net: EngineeringSystemNet, q_b, q_e, u_minus, u_plus, *, step=1, tol=0.0):
    """Advance the engineering system net by one time step."""
    return _step(net.m_plus, net.m_minus, net.dt, q_b, q_e, u_minus, u_plus, step,
                 net.place_ids, net.transition_ids, tol)


def step_operand_net(net: OperandNet, q_s, q_e, u_minus_l, u_plus_l, *, step=1, tol=0.0):
    """Advance one operand net by one time step."""
    return _step(net.m_plus, net.m_minus, net.dt, q_s, q_e, u_minus_l, u_plus_l, step,
                 net.place_ids, net.transition_ids, tol)


def duration_violations(durations, schedule: FiringSchedule, transition_ids=None, tol=1e-9):
    """Breaches of ``U+[k + k_d] == U-[k]`` for k in 1..K-k_d."""
    out = []
    K = schedule.horizon
    for psi, kd in enumerate(np.asarray(durations, dtype=int)):
        for k in range(1, K - kd + 1):
            gap = schedule.u_plus[k + kd - 1, psi] - schedule.u_minus[k - 1, psi]
            if abs(gap) > tol * (1.0 + abs(schedule.u_minus[k - 1, psi])):
                out.append(MarkingViolation("duration", k, psi, float(gap),
                                            transition_ids[psi] if transition_ids else ""))
    return out


def simulate(net, schedule: FiringSchedule, K=None, *, q_b0=None, q_e0=None, tol=1e-9):
    """Roll a net forward under a firing schedule.

    Works for both :class:`EngineeringSystemNet` and :class:`OperandNet`.
    Returns the (K+1)-long marking trajectory and all violations found.
    """
    K = schedule.horizon if K is None else int(K)
    if schedule.horizon != K:
        raise ValueError(f"schedule has {schedule.horizon} steps, expected K={K}")
    if schedule.u_minus.shape[1:] != (net.n_transitions,) and K > 0:
        raise ValueError(f"schedule has {schedule.u_minus.shape[1]} transitions, "
                         f"net has {net.n_transitions}")
    q_b = net.q_b0 if q_b0 is None else np.asarray(q_b0, dtype=float)
    q_e = net.q_e0 if q_e0 is None else np.asarray(q_e0, dtype=float)
    qb_traj = [np.array(q_b, dtype=float)]
    qe_traj = [np.array(q_e, dtype=float)]
    violations = []
    for k in range(K):
        res = _step(net.m_plus, net.m_minus, net.dt, qb_traj[-1], qe_traj[-1],
                    schedule.u_minus[k], schedule.u_plus[k], k + 1,
                    net.place_ids, net.transition_ids, tol)
        qb_traj.append(res.q_b)
        qe_traj.append(res.q_e)
        violations.extend(res.violations)
    violations.extend(duration_violations(net.durations, schedule, net.transition_ids, tol))
    return Trajectory(np.vstack(qb_traj), np.vstack(qe_traj), violations)


def check_sync(sync: SyncMatrices, u_l_minus, u_l_plus, u_minus, u_plus):
    """Residuals ``U_L- - L- U-`` and ``U_L+ - L+ U+``; zero when synchronized.

    Accepts single vectors or (K, n) arrays of per-step firings.
    """
    def resid(lam, ul, u):
        ul = np.asarray(ul, dtype=float)
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            return ul - lam @ u
        return ul - (lam @ u.T).T

    return (resid(sync.lambda_minus, u_l_minus, u_minus),
            resid(sync.lambda_plus, u_l_plus, u_plus))
