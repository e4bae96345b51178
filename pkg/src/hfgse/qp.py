"""Convex quadratic programs with a diagonal Hessian.

Problem form::

    minimize    x' diag(f_quad) x + f_lin' x
    subject to  A_eq x = b_eq
                D x <= e

Duals follow the Lagrangian ``L = obj + lam'(A x - b) + mu'(D x - e)`` with
``mu >= 0``; e.g. ``min x^2 s.t. x = 1`` has ``lam = -2``.

The solver is a primal active-set method.  Variables are rescaled so every
positive Hessian entry becomes 1 and constraint rows are normalized, which
keeps weights spanning many orders of magnitude (typical of measurement
weighting) well conditioned.  Equality-constrained subproblems are solved
with a sparse LU of the KKT matrix when the free Hessian block is positive
definite and with a dense null-space method otherwise (semidefinite
objectives and the phase-1 feasibility LP).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import structural_rank

log = logging.getLogger(__name__)

TOL_ABS = 1e-8
TOL_REL = 1e-8


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITERATIONS = "max_iterations"


class RowLabel(NamedTuple):
    equation: str
    k: int | None
    entity: str


class Residuals(NamedTuple):
    primal: float
    stationarity: float
    complementarity: float


def _csr(m, n_cols):
    if m is None:
        return sp.csr_matrix((0, n_cols))
    m = sp.csr_matrix(m, dtype=float)
    m.sum_duplicates()
    m.sort_indices()
    return m


@dataclass
class QuadraticProgram:
    f_quad: np.ndarray
    f_lin: np.ndarray | None = None
    a_eq: sp.csr_matrix | None = None
    b_eq: np.ndarray | None = None
    d_ineq: sp.csr_matrix | None = None
    e_ineq: np.ndarray | None = None
    eq_labels: list[RowLabel] | None = None
    ineq_labels: list[RowLabel] | None = None

    def __post_init__(self):
        self.f_quad = np.asarray(self.f_quad, dtype=float).reshape(-1)
        n = self.f_quad.size
        self.f_lin = np.zeros(n) if self.f_lin is None else \
            np.asarray(self.f_lin, dtype=float).reshape(-1)
        self.a_eq = _csr(self.a_eq, n)
        self.d_ineq = _csr(self.d_ineq, n)
        self.b_eq = np.zeros(self.a_eq.shape[0]) if self.b_eq is None else \
            np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.e_ineq = np.zeros(self.d_ineq.shape[0]) if self.e_ineq is None else \
            np.asarray(self.e_ineq, dtype=float).reshape(-1)
        if (self.f_quad < 0).any() or not np.isfinite(self.f_quad).all():
            raise ValueError("f_quad must be finite and nonnegative")
        if self.f_lin.shape != (n,):
            raise ValueError(f"f_lin has length {self.f_lin.size}, expected {n}")
        if self.a_eq.shape[1] != n or self.b_eq.shape != (self.a_eq.shape[0],):
            raise ValueError("equality system dimensions are inconsistent")
        if self.d_ineq.shape[1] != n or self.e_ineq.shape != (self.d_ineq.shape[0],):
            raise ValueError("inequality system dimensions are inconsistent")
        for labels, m in ((self.eq_labels, self.a_eq), (self.ineq_labels, self.d_ineq)):
            if labels is not None and len(labels) != m.shape[0]:
                raise ValueError("row labels do not match the number of rows")

    @property
    def n(self) -> int:
        return self.f_quad.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ (self.f_quad * x) + self.f_lin @ x)


@dataclass
class Solution:
    x: np.ndarray
    duals_eq: np.ndarray
    duals_ineq: np.ndarray
    status: Status
    residuals: Residuals = Residuals(np.inf, np.inf, np.inf)
    tolerances: Residuals = Residuals(0.0, 0.0, 0.0)
    objective: float = np.nan
    iterations: int = 0
    active: tuple[int, ...] = ()
    message: str = ""
    dropped_eq: tuple[int, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def kkt_residuals(qp: QuadraticProgram, solution) -> Residuals:
    """Primal feasibility, stationarity and complementarity (inf-norms).

    Computed from the problem data and the returned primal/dual vectors only.
    """
    x = np.asarray(solution.x, dtype=float)
    lam = np.asarray(solution.duals_eq, dtype=float)
    mu = np.asarray(solution.duals_ineq, dtype=float)
    r_eq = qp.a_eq @ x - qp.b_eq
    slack = qp.d_ineq @ x - qp.e_ineq
    primal = max(np.abs(r_eq).max(initial=0.0), np.maximum(slack, 0.0).max(initial=0.0))
    grad = 2.0 * qp.f_quad * x + qp.f_lin + qp.a_eq.T @ lam + qp.d_ineq.T @ mu
    stationarity = np.abs(grad).max(initial=0.0)
    comp = max(np.abs(mu * slack).max(initial=0.0), np.maximum(-mu, 0.0).max(initial=0.0))
    return Residuals(float(primal), float(stationarity), float(comp))


def residual_tolerances(qp, solution, tol_abs=TOL_ABS, tol_rel=TOL_REL) -> Residuals:
    x = np.abs(np.asarray(solution.x, dtype=float))
    lam = np.abs(solution.duals_eq)
    mu = np.abs(solution.duals_ineq)
    abs_a, abs_d = abs(qp.a_eq), abs(qp.d_ineq)
    e_fin = np.abs(qp.e_ineq[np.isfinite(qp.e_ineq)])
    ax, dx = abs_a @ x, abs_d @ x
    primal = max(np.abs(qp.b_eq).max(initial=0.0), e_fin.max(initial=0.0),
                 ax.max(initial=0.0), dx.max(initial=0.0))
    stat = max(np.abs(2 * qp.f_quad * x).max(initial=0.0), np.abs(qp.f_lin).max(initial=0.0),
               (abs_a.T @ lam).max(initial=0.0), (abs_d.T @ mu).max(initial=0.0))
    comp = (mu * (dx + np.abs(qp.e_ineq))).max(initial=0.0) if mu.size else 0.0
    return Residuals(*(tol_abs + tol_rel * s for s in (primal, stat, comp)))


# -- active-set core -------------------------------------------------------


class _Scaled:
    """Problem in scaled variables ``y = x / s`` with unit-norm rows."""

    def __init__(self, qp: QuadraticProgram):
        n = qp.n
        h = 2.0 * qp.f_quad
        self.s = np.where(h > 0, 1.0 / np.sqrt(np.where(h > 0, h, 1.0)), 1.0)
        S = sp.diags(self.s)
        self.h = np.where(h > 0, 1.0, 0.0)
        self.g = qp.f_lin * self.s
        A = (qp.a_eq @ S).tocsr()
        D = (qp.d_ineq @ S).tocsr()
        self.ra = _row_scale(A)
        self.rd = _row_scale(D)
        self.A = (sp.diags(self.ra) @ A).tocsr()
        self.b = qp.b_eq * self.ra
        self.D = (sp.diags(self.rd) @ D).tocsr()
        self.e = qp.e_ineq * self.rd
        self.n = n


def _row_scale(m):
    if m.shape[0] == 0:
        return np.ones(0)
    big = abs(m).max(axis=1).toarray().reshape(-1)
    return np.where(big > 0, 1.0 / np.where(big > 0, big, 1.0), 1.0)


class _Core:
    def __init__(self, h, g, A, b, D, e, tol, max_iter):
        self.h, self.g = h, g
        self.A, self.b = sp.csr_matrix(A), b
        self.D, self.e = sp.csr_matrix(D), e
        self.n = h.size
        self.tol = tol
        self.max_iter = max_iter
        nnz_per_row = np.diff(self.D.indptr)
        self.bound_var = np.full(self.D.shape[0], -1)
        self.bound_coef = np.zeros(self.D.shape[0])
        for i in np.flatnonzero(nnz_per_row == 1):
            j = self.D.indptr[i]
            self.bound_var[i] = self.D.indices[j]
            self.bound_coef[i] = self.D.data[j]
        self.Dt = self.D.T.tocsr()

    def _eqp(self, y, grad, fixed, gen):
        n = self.n
        free_mask = np.ones(n, dtype=bool)
        if fixed:
            free_mask[list(fixed.keys())] = False
        free = np.flatnonzero(free_mask)
        rows = [self.A]
        if gen:
            rows.append(self.D[sorted(gen)])
        C = sp.vstack(rows).tocsc()[:, free].tocsr() if free.size else None
        m = self.A.shape[0] + len(gen)
        hF, gF = self.h[free], grad[free]
        p = np.zeros(n)
        if free.size == 0:
            return p, np.zeros(m), False
        if m == 0 and (hF > 0).all():
            p[free] = -gF / hF
            return p, np.zeros(0), False
        if m or (hF > 0).all():
            # A nonsingular KKT matrix means the reduced Hessian is positive
            # definite (the Hessian is PSD); singular cases fall through.
            # Rows touching only fixed variables are satisfied already and
            # get a zero multiplier.  SuperLU is never handed a structurally
            # singular matrix: it can corrupt memory on those.
            live = np.flatnonzero(np.diff(C.indptr) > 0) if m else np.zeros(0, int)
            Cl = C[live] if m else sp.csr_matrix((0, free.size))
            kkt = sp.bmat([[sp.diags(hF), Cl.T], [Cl, None]], format="csc") if live.size \
                else sp.diags(hF, format="csc")
            if structural_rank(kkt) == kkt.shape[0]:
                rhs = np.concatenate([-gF, np.zeros(live.size)])
                big = 1e10 * (1.0 + np.abs(y).max(initial=0.0) + np.abs(gF).max(initial=0.0))
                try:
                    sol = spla.splu(kkt, permc_spec="COLAMD").solve(rhs)
                    res = np.abs(kkt @ sol - rhs).max(initial=0.0)
                    if (np.isfinite(sol).all() and np.abs(sol[:free.size]).max() <= big
                            and res <= 1e-10 * (1.0 + np.abs(rhs).max(initial=0.0))):
                        p[free] = sol[:free.size]
                        lam = np.zeros(m)
                        lam[live] = sol[free.size:]
                        return p, lam, False
                except RuntimeError:
                    pass
            log.debug("sparse KKT solve failed; using dense null-space path")
        return self._eqp_dense(C, hF, gF, free, m)

    def _eqp_dense(self, C, hF, gF, free, m):
        nF = free.size
        p = np.zeros(self.n)
        if m:
            Ct = C.toarray().T
            Q, R = la.qr(Ct, mode="full")
            Y, Z, R1 = Q[:, :m], Q[:, m:], R[:m, :]
        else:
            Y, Z, R1 = np.zeros((nF, 0)), np.eye(nF), np.zeros((0, 0))
        ray = False
        if Z.shape[1]:
            Hr = Z.T @ (hF[:, None] * Z)
            w, V = np.linalg.eigh(Hr)
            c = V.T @ (Z.T @ gF)
            zero = w <= 1e-9 * max(1.0, w.max(initial=0.0))
            gscale = 1e-9 * max(1.0, np.abs(gF).max(initial=0.0))
            if (np.abs(c[zero]) > gscale).any():
                v = -V[:, zero] @ c[zero]
                ray = True
            else:
                pos = ~zero
                v = -V[:, pos] @ (c[pos] / w[pos])
            p[free] = Z @ v
        lam = np.zeros(m)
        if m and not ray:
            lam = la.solve_triangular(R1, -(Y.T @ (hF * p[free] + gF)))
        return p, lam, ray

    def _multipliers(self, grad, lam, fixed, gen):
        """Multipliers of working-set inequality rows, keyed by row index."""
        n_a = self.A.shape[0]
        gen_sorted = sorted(gen)
        mu = {}
        for idx, row in enumerate(gen_sorted):
            mu[row] = lam[n_a + idx]
        if fixed:
            r = grad + self.A.T @ lam[:n_a]
            if gen_sorted:
                r = r + self.D[gen_sorted].T @ lam[n_a:]
            for var, row in fixed.items():
                mu[row] = -r[var] / self.bound_coef[row]
        return mu, lam[:n_a]

    def run(self, y):
        fixed: dict[int, int] = {}
        gen: set[int] = set()
        degenerate = 0
        stationary_next = False
        tol = self.tol
        for it in range(1, self.max_iter + 1):
            grad = self.h * y + self.g
            p, lam, ray = self._eqp(y, grad, fixed, gen)
            ynorm = 1.0 + np.abs(y).max(initial=0.0)
            if not ray and (stationary_next or np.abs(p).max(initial=0.0) <= 1e-11 * ynorm):
                stationary_next = False
                mu, lam_a = self._multipliers(grad, lam, fixed, gen)
                neg = {r: v for r, v in mu.items() if v < -tol}
                if not neg:
                    return y, lam_a, mu, "optimal", it
                if degenerate >= 3:
                    leave = min(neg)
                else:
                    leave = min(neg, key=lambda r: (neg[r], r))
                if self.bound_var[leave] >= 0:
                    del fixed[int(self.bound_var[leave])]
                else:
                    gen.discard(leave)
                continue
            # ratio test over inequality rows outside the working set
            dp = self.D @ p
            slack = self.e - self.D @ y
            in_w = np.zeros(self.D.shape[0], dtype=bool)
            if fixed:
                in_w[list(fixed.values())] = True
            if gen:
                in_w[list(gen)] = True
            pn = np.abs(p).max(initial=0.0)
            cand = np.flatnonzero((~in_w) & (dp > 1e-12 * pn))
            if self.bound_var.size:
                # a bound on an already-fixed variable cannot block
                bv = self.bound_var[cand]
                ok = np.array([b < 0 or b not in fixed for b in bv], dtype=bool)
                cand = cand[ok]
            alpha, block = (np.inf if ray else 1.0), -1
            if cand.size:
                ratios = np.maximum(slack[cand], 0.0) / dp[cand]
                rmin = ratios.min()
                if rmin < alpha:
                    ties = cand[ratios <= rmin + 1e-14 * (1.0 + rmin)]
                    block = int(ties.min())
                    alpha = rmin
            if ray and block < 0:
                return y, None, None, "unbounded", it
            y = y + alpha * p
            if block >= 0:
                bv = int(self.bound_var[block])
                if bv >= 0:
                    fixed[bv] = block
                else:
                    gen.add(block)
                degenerate = degenerate + 1 if alpha == 0.0 else 0
            else:
                degenerate = 0
                stationary_next = True
        return y, None, None, "max_iterations", self.max_iter


def _independent_rows(A: sp.csr_matrix, b, feas_tol):
    """Indices of a row basis of ``A`` and a min-norm point on ``A y = b``.

    Returns ``(keep, y0, consistent)``.
    """
    m, n = A.shape
    if m == 0:
        return np.arange(0), np.zeros(n), True
    At = A.toarray().T
    Q, R, piv = la.qr(At, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int((d > 1e-10 * max(1.0, d.max(initial=0.0))).sum()) if d.size else 0
    Qr, Rr = Q[:, :rank], R[:rank, :rank]
    y0 = Qr @ la.solve_triangular(Rr, b[piv[:rank]], trans="T") if rank else np.zeros(n)
    consistent = np.abs(A @ y0 - b).max(initial=0.0) <= feas_tol
    return np.sort(piv[:rank]), y0, bool(consistent)


def solve_qp(qp: QuadraticProgram, *, tol_abs=TOL_ABS, tol_rel=TOL_REL, max_iter=None,
             x0=None) -> Solution:
    """Solve a convex diagonal QP by a primal active-set method.

    ``x0`` may supply a known feasible point; otherwise a phase-1 LP finds one.
    """
    n = qp.n
    m, p_rows = qp.a_eq.shape[0], qp.d_ineq.shape[0]
    if max_iter is None:
        max_iter = 20 * (n + p_rows) + 200
    sc = _Scaled(qp)
    scale = 1.0 + max(np.abs(sc.b).max(initial=0.0),
                      np.abs(sc.e[np.isfinite(sc.e)]).max(initial=0.0))
    feas_tol = 1e-9 * scale

    def fail(status, msg, it=0):
        return Solution(np.full(n, np.nan), np.zeros(m), np.zeros(p_rows), Status(status),
                        iterations=it, message=msg)

    # zero rows: drop if consistent
    a_nnz = np.diff(sc.A.indptr)
    zero_eq = a_nnz == 0
    if (np.abs(sc.b[zero_eq]) > feas_tol).any():
        return fail("infeasible", "empty equality row with nonzero right-hand side")
    d_nnz = np.diff(sc.D.indptr)
    zero_in = d_nnz == 0
    if (sc.e[zero_in] < -feas_tol).any():
        return fail("infeasible", "empty inequality row with negative bound")
    eq_rows = np.flatnonzero(~zero_eq)
    in_rows = np.flatnonzero(~zero_in & np.isfinite(sc.e))
    A, b = sc.A[eq_rows], sc.b[eq_rows]
    D, e = sc.D[in_rows], sc.e[in_rows]

    keep, y0, consistent = _independent_rows(A, b, feas_tol)
    if not consistent:
        return fail("infeasible", "equality constraints are inconsistent")
    A, b = A[keep], b[keep]

    y = None
    if x0 is not None:
        ys = np.asarray(x0, dtype=float) / sc.s
        if (np.abs(A @ ys - b).max(initial=0.0) <= feas_tol
                and (D @ ys - e).max(initial=-1.0) <= feas_tol):
            y = ys
    if y is None:
        viol = (D @ y0 - e).max(initial=0.0)
        if viol <= feas_tol:
            y = y0
        else:
            # phase 1: min t  s.t.  A y = b,  D y - t <= e,  t >= 0
            n1 = D.shape[0]
            A1 = sp.hstack([A, sp.csr_matrix((A.shape[0], 1))]).tocsr()
            D1 = sp.vstack([sp.hstack([D, -sp.csr_matrix(np.ones((n1, 1)))]),
                            sp.csr_matrix(([-1.0], ([0], [n])), shape=(1, n + 1))]).tocsr()
            e1 = np.concatenate([e, [0.0]])
            g1 = np.zeros(n + 1)
            g1[-1] = 1.0
            core1 = _Core(np.zeros(n + 1), g1, A1, b, D1, e1, 1e-12, max_iter)
            z, _, _, status1, it1 = core1.run(np.concatenate([y0, [viol]]))
            if status1 != "optimal":
                return fail("max_iterations" if status1 == "max_iterations" else "infeasible",
                            f"phase 1 ended with {status1}", it1)
            if z[-1] > feas_tol:
                return fail("infeasible", f"no feasible point (phase-1 gap {z[-1]:.3g})", it1)
            y = z[:n]

    dual_tol = 1e-9 * (1.0 + np.abs(sc.g).max(initial=0.0) + np.abs(sc.h * y).max(initial=0.0))
    core = _Core(sc.h, sc.g, A, b, D, e, dual_tol, max_iter)
    y, lam_kept, mu_map, status, iters = core.run(y)
    if status != "optimal":
        sol = fail(status, f"active-set iteration ended with {status}", iters)
        if status == "max_iterations":
            sol.x = y * sc.s
        return sol

    lam_y = np.zeros(sc.A.shape[0])
    lam_y[eq_rows[keep]] = lam_kept
    mu_y = np.zeros(sc.D.shape[0])
    for r, v in mu_map.items():
        mu_y[in_rows[r]] = v
    x = y * sc.s
    active = tuple(sorted(int(in_rows[r]) for r in mu_map))
    dropped = tuple(int(i) for i in np.setdiff1d(np.arange(m), eq_rows[keep]))
    sol = Solution(x, lam_y * sc.ra, mu_y * sc.rd, Status.OPTIMAL, objective=qp.objective(x),
                   iterations=iters, active=active, dropped_eq=dropped)
    sol.residuals = kkt_residuals(qp, sol)
    sol.tolerances = residual_tolerances(qp, sol, tol_abs, tol_rel)
    if any(r > t for r, t in zip(sol.residuals, sol.tolerances)):
        log.warning("residuals %s exceed tolerances %s", sol.residuals, sol.tolerances)
        sol.status = Status.MAX_ITERATIONS
        sol.message = "terminated without meeting residual tolerances"
    return sol


def solve_eq_qp(qp: QuadraticProgram, **kwargs) -> Solution:
    """Solve a QP that has only equality constraints."""
    if qp.d_ineq.shape[0]:
        raise ValueError("solve_eq_qp expects no inequality constraints")
    return solve_qp(qp, **kwargs)


# -- plain-text exports ----------------------------------------------------


def _write_triplets(fh, m):
    m = sp.csc_matrix(m)
    m.sum_duplicates()
    m.sort_indices()
    fh.write(f"{m.shape[0]} {m.shape[1]} {m.nnz}\n")
    for col in range(m.shape[1]):
        for idx in range(m.indptr[col], m.indptr[col + 1]):
            fh.write(f"{m.indices[idx]} {col} {m.data[idx]:.17g}\n")


def dump_qp(qp: QuadraticProgram, path) -> None:
    """Write the QP as six triplet blocks.

    Order: f_quad (n x 1), f_lin (n x 1), A_eq, b_eq (m x 1), D, e (p x 1).
    Each block is a ``rows cols nnz`` header followed by zero-based
    ``row col value`` lines in column-major order.
    """
    col = lambda v: sp.csc_matrix(np.asarray(v, dtype=float).reshape(-1, 1))
    with open(path, "w", encoding="utf-8") as fh:
        for block in (col(qp.f_quad), col(qp.f_lin), qp.a_eq, col(qp.b_eq),
                      qp.d_ineq, col(qp.e_ineq)):
            _write_triplets(fh, block)


def load_qp_dump(path) -> QuadraticProgram:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    blocks, pos = [], 0
    for _ in range(6):
        r, c, nnz = map(int, lines[pos])
        pos += 1
        rows, cols, vals = [], [], []
        for ln in lines[pos:pos + nnz]:
            rows.append(int(ln[0]))
            cols.append(int(ln[1]))
            vals.append(float(ln[2]))
        pos += nnz
        blocks.append(sp.csr_matrix((vals, (rows, cols)), shape=(r, c)))
    vec = lambda m: m.toarray().reshape(-1)
    return QuadraticProgram(vec(blocks[0]), vec(blocks[1]), blocks[2], vec(blocks[3]),
                            blocks[4], vec(blocks[5]))


def write_provenance(qp: QuadraticProgram, path) -> None:
    """CSV of constraint rows: row, equation, k, entity id.

    Equality rows come first; inequality row ``i`` is numbered ``m + i``.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "equation", "k", "entity"])
        row = 0
        for labels, m in ((qp.eq_labels, qp.a_eq), (qp.ineq_labels, qp.d_ineq)):
            for i in range(m.shape[0]):
                lab = labels[i] if labels else RowLabel("", None, "")
                w.writerow([row, lab.equation, "" if lab.k is None else lab.k, lab.entity])
                row += 1
