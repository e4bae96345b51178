"""Weighted least-squares state estimation over a steady-flow system net.

Decision vector::

    x = [vec(U_1..U_K); U_{K+1}; E]

``vec`` is column-major over the (capabilities x K) flow matrix, so step k
occupies a contiguous block.  Each measurement series contributes one row per
data bucket, ``D_U U - E = C``, where ``D_U = D_T' (x) D_E`` expands the
series' capability footprint over its time buckets.
"""
from __future__ import annotations

import calendar
import datetime as _dt
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .core import SystemArchitecture, incidence_matrices
from .qp import QuadraticProgram, RowLabel, Solution, Status, solve_qp, TOL_ABS, TOL_REL

log = logging.getLogger(__name__)

CONSERVATION_TOL = 1e-6


class MeasurementError(ValueError):
    pass


class EstimationFailed(RuntimeError):
    def __init__(self, solution: Solution):
        self.solution = solution
        super().__init__(f"solver returned {solution.status.value}: {solution.message} "
                         f"(iterations={solution.iterations}, residuals={tuple(solution.residuals)})")


@dataclass(frozen=True)
class MeasurementSeries:
    """One exogenous data series.

    ``capabilities`` lists the capability ids (or indices) whose flows the
    data aggregates; ``buckets`` lists, per data value, the 1-based model
    steps it covers.
    """

    id: str
    capabilities: tuple
    buckets: tuple[tuple[int, ...], ...]
    values: np.ndarray
    weight: float | None = None
    unit: str = "GJ"
    process: str | None = None  # grouping tags; derived from the footprint when None
    region: str | None = None

    def __post_init__(self):
        caps = tuple(self.capabilities)
        buckets = tuple(tuple(int(k) for k in b) for b in self.buckets)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        values.setflags(write=False)
        if not caps:
            raise MeasurementError(f"series {self.id}: empty capability footprint")
        if len(set(caps)) != len(caps):
            raise MeasurementError(f"series {self.id}: repeated capability in footprint")
        if not buckets or any(not b for b in buckets):
            raise MeasurementError(f"series {self.id}: empty temporal footprint")
        if values.shape != (len(buckets),):
            raise MeasurementError(f"series {self.id}: {values.size} values for {len(buckets)} buckets")
        if not np.isfinite(values).all():
            raise MeasurementError(f"series {self.id}: values must be finite")
        if self.weight is not None and not (np.isfinite(self.weight) and self.weight > 0):
            raise MeasurementError(f"series {self.id}: weight override must be positive")
        object.__setattr__(self, "capabilities", caps)
        object.__setattr__(self, "buckets", buckets)
        object.__setattr__(self, "values", values)

    @classmethod
    def monthly(cls, id, capabilities, values, **kw):
        return cls(id, capabilities, tuple((k,) for k in range(1, len(values) + 1)), values, **kw)

    @classmethod
    def total(cls, id, capabilities, value, K, **kw):
        return cls(id, capabilities, (tuple(range(1, K + 1)),), [value], **kw)

    @property
    def n_buckets(self) -> int:
        return len(self.buckets)


def _cap_indices(series: MeasurementSeries, n_capabilities, cap_index=None):
    out = []
    for c in series.capabilities:
        if isinstance(c, (int, np.integer)):
            idx = int(c)
        elif cap_index is not None and c in cap_index:
            idx = cap_index[c]
        else:
            raise MeasurementError(f"series {series.id}: unknown capability {c!r}")
        if not 0 <= idx < n_capabilities:
            raise MeasurementError(f"series {series.id}: capability index {idx} out of range")
        out.append(idx)
    return sorted(out)


def build_capability_aggregation(measurements: Sequence[MeasurementSeries], n_capabilities: int,
                                 capability_ids: Sequence[str] | None = None) -> sp.csr_matrix:
    """0/1 matrix with one row per series marking its capability footprint."""
    cap_index = {c: i for i, c in enumerate(capability_ids)} if capability_ids else None
    rows, cols = [], []
    for m, s in enumerate(measurements):
        for j in _cap_indices(s, n_capabilities, cap_index):
            rows.append(m)
            cols.append(j)
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)),
                         shape=(len(measurements), n_capabilities))


def build_temporal_aggregation(K: int, buckets: Sequence[Iterable[int]]) -> sp.csr_matrix:
    """(K x n_buckets) 0/1 matrix; entry (k, b) is 1 iff step k+1 lies in bucket b."""
    rows, cols, seen = [], [], {}
    for b, steps in enumerate(buckets):
        for k in steps:
            k = int(k)
            if not 1 <= k <= K:
                raise MeasurementError(f"bucket {b} references step {k} outside 1..{K}")
            if k in seen:
                raise MeasurementError(f"step {k} appears in buckets {seen[k]} and {b}")
            seen[k] = b
            rows.append(k - 1)
            cols.append(b)
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(K, len(buckets)))


def build_measurement_matrix(d_cap, d_time) -> sp.csr_matrix:
    """``kron(d_time', d_cap)``: maps vec(U) to vec(d_cap @ U @ d_time)."""
    return sp.kron(sp.csr_matrix(d_time).T, sp.csr_matrix(d_cap), format="csr")


@dataclass(frozen=True)
class AggregationMatrices:
    d_cap: sp.csr_matrix
    d_time: sp.csr_matrix
    d_u: sp.csr_matrix

    @classmethod
    def build(cls, d_cap, d_time):
        return cls(sp.csr_matrix(d_cap), sp.csr_matrix(d_time), build_measurement_matrix(d_cap, d_time))


@dataclass(frozen=True)
class FineSeries:
    """Sub-step data, laid out as consecutive samples from ``first_step`` on."""

    id: str
    capabilities: tuple
    values: np.ndarray
    samples_per_step: tuple[int, ...]
    first_step: int = 1


def downsample_fine_data(series: FineSeries, K: int, **kw) -> MeasurementSeries:
    """Sum fine samples into model steps; every covered step must be complete."""
    values = np.asarray(series.values, dtype=float).reshape(-1)
    counts = [int(c) for c in series.samples_per_step]
    if any(c <= 0 for c in counts):
        raise MeasurementError(f"series {series.id}: samples per step must be positive")
    out, buckets, pos = [], [], 0
    step = series.first_step
    for c in counts:
        if pos >= values.size:
            break
        if pos + c > values.size:
            raise MeasurementError(f"series {series.id}: step {step} has only "
                                   f"{values.size - pos} of {c} samples")
        if not 1 <= step <= K:
            raise MeasurementError(f"series {series.id}: step {step} outside 1..{K}")
        out.append(float(values[pos:pos + c].sum()))
        buckets.append((step,))
        pos += c
        step += 1
    if pos != values.size:
        raise MeasurementError(f"series {series.id}: {values.size - pos} samples beyond the last step")
    return MeasurementSeries(series.id, series.capabilities, tuple(buckets), out, **kw)


def daily_to_monthly(id, capabilities, start: _dt.date, values, K: int, first_step=1, **kw):
    """Aggregate daily values that begin on the first day of a month."""
    if start.day != 1:
        raise MeasurementError(f"series {id}: daily data starting {start} leaves a partial month")
    counts, y, m = [], start.year, start.month
    for _ in range(K - first_step + 1):
        counts.append(calendar.monthrange(y, m)[1])
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return downsample_fine_data(FineSeries(id, tuple(capabilities), values, tuple(counts),
                                           first_step), K, **kw)


@dataclass(frozen=True)
class WeightingScheme:
    series_weights: np.ndarray  # one weight per series
    alpha: float
    row_weights: np.ndarray  # expanded to one entry per (series, bucket) row

    @property
    def f_error(self) -> np.ndarray:
        return self.row_weights


ALPHA_RULES = ("formula", "relative")


def compute_weights(measurements: Sequence[MeasurementSeries], *, rule="formula",
                    alpha: float | None = None) -> WeightingScheme:
    """Error weights ``1 / max(value)^2`` per series and a flow penalty alpha.

    ``rule="formula"`` sets ``alpha = 0.01 * min_series max_bucket value^2``;
    ``rule="relative"`` sets ``alpha = 0.01 * min(error weights)``, keeping the
    flow penalty two orders of magnitude below the weakest error weight.  An
    explicit ``alpha`` overrides both.  All-zero series get weight 1.
    """
    if not measurements:
        raise MeasurementError("at least one measurement series is required")
    if rule not in ALPHA_RULES:
        raise ValueError(f"unknown alpha rule {rule!r}; expected one of {ALPHA_RULES}")
    peaks = np.array([np.abs(s.values).max() for s in measurements])
    default = np.where(peaks > 0, 1.0 / np.where(peaks > 0, peaks, 1.0) ** 2, 1.0)
    weights = np.array([s.weight if s.weight is not None else w
                        for s, w in zip(measurements, default)])
    if alpha is None:
        if rule == "formula":
            alpha = 0.01 * float(np.min(peaks ** 2))
        else:
            alpha = 0.01 * float(weights.min())
    if not (np.isfinite(alpha) and alpha >= 0):
        raise ValueError("alpha must be finite and nonnegative")
    rows = np.concatenate([np.full(s.n_buckets, w) for s, w in zip(measurements, weights)])
    return WeightingScheme(weights, float(alpha), rows)


@dataclass(frozen=True)
class CapacitySet:
    """Upper bounds on capability flow per step, keyed by capability id."""

    bounds: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for k, v in dict(self.bounds).items():
            v = float(v)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"capacity for {k} must be nonnegative, got {v}")
            clean[str(k)] = v
        object.__setattr__(self, "bounds", clean)

    @classmethod
    def from_architecture(cls, arch: SystemArchitecture, overrides=None):
        b = {c.id: c.capacity for c in arch.capabilities if c.capacity is not None}
        b.update(overrides or {})
        return cls(b)

    def selector(self, capability_ids: Sequence[str]):
        """Rows of the selector pattern and bound vector, in capability order."""
        index = {c: i for i, c in enumerate(capability_ids)}
        unknown = sorted(set(self.bounds) - set(index))
        if unknown:
            raise MeasurementError(f"capacity for unknown capability {unknown[0]!r}")
        ids = [c for c in capability_ids if c in self.bounds]
        sel = sp.csr_matrix((np.ones(len(ids)), (range(len(ids)), [index[c] for c in ids])),
                            shape=(len(ids), len(capability_ids)))
        return ids, sel, np.array([self.bounds[c] for c in ids])


@dataclass(frozen=True)
class WlseLayout:
    n_capabilities: int
    horizon: int
    n_rows: int  # measurement rows

    @property
    def n_flow(self) -> int:
        return self.n_capabilities * (self.horizon + 1)

    @property
    def n(self) -> int:
        return self.n_flow + self.n_rows

    def flow(self, k: int) -> slice:
        s = (k - 1) * self.n_capabilities
        return slice(s, s + self.n_capabilities)

    @property
    def errors(self) -> slice:
        return slice(self.n_flow, self.n)


class WlseProblem(NamedTuple):
    qp: QuadraticProgram
    layout: WlseLayout
    weights: WeightingScheme
    d_u: sp.csr_matrix
    c: np.ndarray
    row_series: np.ndarray  # series index of each measurement row
    capacity_ids: list


def assemble_wlse(arch: SystemArchitecture, measurements: Sequence[MeasurementSeries],
                  capacities: CapacitySet | None, K: int, *, dt=1.0,
                  weights: WeightingScheme | None = None, alpha_rule="relative",
                  alpha=None) -> WlseProblem:
    if K < 1:
        raise ValueError("horizon must be at least 1")
    m_plus, m_minus = incidence_matrices(arch)
    M = sp.csr_matrix(m_plus - m_minus) * float(dt)
    n_cap = arch.n_capabilities
    cap_ids = arch.capability_ids()
    cap_index = {c: i for i, c in enumerate(cap_ids)}

    blocks, c_rows, row_series, labels_meas = [], [], [], []
    for si, s in enumerate(measurements):
        d_cap = sp.csr_matrix((np.ones(len(s.capabilities)),
                               ([0] * len(s.capabilities), _cap_indices(s, n_cap, cap_index))),
                              shape=(1, n_cap))
        d_time = build_temporal_aggregation(K, s.buckets)
        blocks.append(build_measurement_matrix(d_cap, d_time))
        c_rows.append(s.values)
        row_series.extend([si] * s.n_buckets)
        labels_meas.extend(RowLabel("measurement", min(b), s.id) for b in s.buckets)
    n_rows = len(row_series)
    lay = WlseLayout(n_cap, K, n_rows)
    d_u = sp.vstack(blocks, format="csr") if blocks else sp.csr_matrix((0, n_cap * K))
    c = np.concatenate(c_rows) if c_rows else np.zeros(0)

    if weights is None:
        weights = compute_weights(measurements, rule=alpha_rule, alpha=alpha) if measurements \
            else WeightingScheme(np.zeros(0), 0.0 if alpha is None else float(alpha), np.zeros(0))

    places = arch.place_labels()
    cons = sp.kron(sp.identity(K), M, format="csr")
    n_flow_k = n_cap * K
    A = sp.vstack([
        sp.hstack([cons, sp.csr_matrix((cons.shape[0], n_cap + n_rows))]),
        sp.hstack([d_u, sp.csr_matrix((n_rows, n_cap)), -sp.identity(n_rows)]),
        sp.hstack([sp.csr_matrix((n_cap, n_flow_k)), sp.identity(n_cap),
                   sp.csr_matrix((n_cap, n_rows))]),
    ], format="csr")
    b = np.concatenate([np.zeros(cons.shape[0]), c, np.zeros(n_cap)])
    eq_labels = [RowLabel("conservation", k, p) for k in range(1, K + 1) for p in places]
    eq_labels += labels_meas
    eq_labels += [RowLabel("final", K + 1, cid) for cid in cap_ids]

    capacities = capacities or CapacitySet()
    ids, sel, bound = capacities.selector(cap_ids)
    cap_blk = sp.kron(sp.identity(K), sel, format="csr")
    nn_blk = -sp.identity(n_flow_k, format="csr")
    d_flow = sp.vstack([cap_blk, nn_blk], format="csr")
    D = sp.hstack([d_flow, sp.csr_matrix((d_flow.shape[0], n_cap + n_rows))], format="csr")
    e = np.concatenate([np.tile(bound, K), np.zeros(n_flow_k)])
    in_labels = [RowLabel("capacity", k, cid) for k in range(1, K + 1) for cid in ids]
    in_labels += [RowLabel("nonnegative", k, cid) for k in range(1, K + 1) for cid in cap_ids]

    f_quad = np.concatenate([np.full(n_flow_k, weights.alpha), np.zeros(n_cap), weights.row_weights])
    qp = QuadraticProgram(f_quad, None, A, b, D, e, eq_labels, in_labels)
    return WlseProblem(qp, lay, weights, d_u, c, np.array(row_series, dtype=int), ids)


class CapacityBinding(NamedTuple):
    capability: str
    k: int
    flow: float
    bound: float
    dual: float


@dataclass
class EstimationResult:
    arch: SystemArchitecture
    measurements: tuple
    flows: np.ndarray  # (n_capabilities, K)
    errors: np.ndarray  # one entry per measurement row
    row_series: np.ndarray
    objective: float
    weighted_errors: np.ndarray  # f_error * e^2 per row
    capacity_bindings: list
    conservation_residual: float
    weights: WeightingScheme
    solution: Solution
    dt: float = 1.0

    @property
    def horizon(self) -> int:
        return self.flows.shape[1]

    def series_errors(self, series_id: str) -> np.ndarray:
        idx = [i for i, s in enumerate(self.measurements) if s.id == series_id]
        if not idx:
            raise KeyError(series_id)
        return self.errors[self.row_series == idx[0]]


def conservation_residual(arch: SystemArchitecture, flows, dt=1.0) -> float:
    """Largest scaled balance violation ``|M u_k| / (1 + |u_k|)`` over steps."""
    m_plus, m_minus = incidence_matrices(arch)
    flows = np.asarray(flows, dtype=float)
    worst = 0.0
    for k in range(flows.shape[1]):
        u = flows[:, k]
        r = (m_plus @ u - m_minus @ u) * dt
        worst = max(worst, float(np.abs(r).max(initial=0.0) / (1.0 + np.abs(u).max(initial=0.0))))
    return worst


def _clean(a):
    a = np.array(a, dtype=float)
    a[a == 0] = 0.0  # drop negative zeros
    return a


def estimate(arch: SystemArchitecture, measurements: Sequence[MeasurementSeries],
             capacities: CapacitySet | None, K: int, *, dt=1.0, alpha=None, alpha_rule="relative",
             weights=None, tol_abs=TOL_ABS, tol_rel=TOL_REL, max_iter=None) -> EstimationResult:
    """Assemble, solve and unpack the estimation program."""
    measurements = tuple(measurements)
    prob = assemble_wlse(arch, measurements, capacities, K, dt=dt, weights=weights,
                         alpha_rule=alpha_rule, alpha=alpha)
    lay = prob.layout
    # U = 0, E = -C is always feasible; it saves the phase-1 solve
    x0 = np.zeros(lay.n)
    x0[lay.errors] = -prob.c
    sol = solve_qp(prob.qp, tol_abs=tol_abs, tol_rel=tol_rel, max_iter=max_iter, x0=x0)
    if sol.status is not Status.OPTIMAL:
        raise EstimationFailed(sol)
    log.info("solved %d variables in %d iterations", lay.n, sol.iterations)
    u = sol.x[:lay.n_capabilities * K].reshape(K, lay.n_capabilities).T
    u = _clean(u)
    errors = _clean(prob.d_u @ u.T.reshape(-1) - prob.c)
    resid = conservation_residual(arch, u, dt)
    if resid > CONSERVATION_TOL:
        raise EstimationFailed(Solution(sol.x, sol.duals_eq, sol.duals_ineq, Status.MAX_ITERATIONS,
                                        sol.residuals, sol.tolerances, sol.objective,
                                        sol.iterations, sol.active,
                                        f"conservation residual {resid:.3g} above tolerance"))
    weighted = prob.weights.row_weights * errors ** 2
    objective = float(prob.weights.alpha * (u ** 2).sum() + weighted.sum())

    bindings = []
    n_cap_rows = len(prob.capacity_ids)
    bounds = capacities.bounds if capacities else {}
    for r in range(n_cap_rows * K):
        mu = sol.duals_ineq[r]
        if r in sol.active or mu > 0:
            k, j = divmod(r, n_cap_rows)
            cid = prob.capacity_ids[j]
            psi = arch.capability_index(cid)
            bindings.append(CapacityBinding(cid, k + 1, float(u[psi, k]), bounds[cid], float(mu)))
    return EstimationResult(arch, measurements, u, errors, prob.row_series, objective, weighted,
                            bindings, resid, prob.weights, sol, float(dt))


def _series_tags(arch: SystemArchitecture, s: MeasurementSeries):
    idx = _cap_indices(s, arch.n_capabilities, {c: i for i, c in enumerate(arch.capability_ids())})
    caps = [arch.capabilities[i] for i in idx]
    proc = s.process or "|".join(sorted({c.process.label for c in caps}))
    region = s.region or "|".join(sorted({arch.buffer(c.origin).location or "-" for c in caps}))
    return proc, region


class ErrorRow(NamedTuple):
    group: str
    imposed: float
    absolute_error: float
    weighted_error: float


GROUPINGS = ("process", "region", "both", "series")


def error_report(result: EstimationResult, measurements=None, grouping="both") -> list[ErrorRow]:
    """Per-group measurement errors, largest absolute error first.

    Groups join series that share a process label and/or region.  Ties are
    ordered by group id.
    """
    if grouping not in GROUPINGS:
        raise ValueError(f"unknown grouping {grouping!r}; expected one of {GROUPINGS}")
    measurements = tuple(measurements) if measurements is not None else result.measurements
    if len(measurements) != len(result.measurements):
        raise ValueError("measurements do not match the estimation result")
    acc = {}
    for si, s in enumerate(measurements):
        proc, region = _series_tags(result.arch, s)
        key = {"process": proc, "region": region, "both": f"{proc} @ {region}",
               "series": s.id}[grouping]
        rows = result.row_series == si
        imposed, err, werr = acc.get(key, (0.0, 0.0, 0.0))
        acc[key] = (imposed + float(s.values.sum()), err + float(np.abs(result.errors[rows]).sum()),
                    werr + float(result.weighted_errors[rows].sum()))
    table = [ErrorRow(k, *v) for k, v in acc.items()]
    table.sort(key=lambda r: (-r.absolute_error, r.group))
    return table
