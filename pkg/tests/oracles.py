"""Reference implementations used only by the tests.

Each one is written the slow, obvious way and shares no code with the
package beyond the data classes it reads.
"""
import itertools

import numpy as np


def dense_incidence(arch):
    """Triple loop over (operand, buffer, capability)."""
    n_op, n_buf, n_cap = arch.n_operands, arch.n_buffers, arch.n_capabilities
    plus = np.zeros((n_op * n_buf, n_cap))
    minus = np.zeros((n_op * n_buf, n_cap))
    for i, op in enumerate(arch.operands):
        for y, buf in enumerate(arch.buffers):
            for psi, cap in enumerate(arch.capabilities):
                for o, c in cap.process.outputs:
                    if o == op.id and cap.destination == buf.id:
                        plus[i * n_buf + y, psi] += c
                for o, c in cap.process.inputs:
                    if o == op.id and cap.origin == buf.id:
                        minus[i * n_buf + y, psi] += c
    return plus, minus


def dense_step(m_plus, m_minus, dt, q_b, q_e, u_minus, u_plus):
    m_plus, m_minus = np.asarray(m_plus), np.asarray(m_minus)
    q_b_next = [q_b[s] + dt * sum(m_plus[s, e] * u_plus[e] - m_minus[s, e] * u_minus[e]
                                  for e in range(m_plus.shape[1]))
                for s in range(m_plus.shape[0])]
    q_e_next = [q_e[e] + dt * (u_minus[e] - u_plus[e]) for e in range(m_plus.shape[1])]
    return np.array(q_b_next), np.array(q_e_next)


def _kkt(H, g, C, d):
    n, m = H.shape[0], C.shape[0]
    K = np.block([[H, C.T], [C, np.zeros((m, m))]])
    sol = np.linalg.lstsq(K, np.concatenate([-g, d]), rcond=None)[0]
    return sol[:n], sol[n:]


def eq_qp_oracle(f_quad, f_lin, A, b):
    """Dense KKT solve of ``min x'Fx + f'x  s.t.  A x = b``."""
    x, lam = _kkt(2 * np.diag(f_quad), np.asarray(f_lin, float), np.asarray(A, float),
                  np.asarray(b, float))
    return x, lam


def brute_force_qp(f_quad, f_lin, A, b, D, e, tol=1e-9):
    """Enumerate every active set; return the best primal-feasible KKT point.

    Only valid for strictly convex problems (``f_quad > 0``), where the
    optimum is the unique feasible stationary point of some active set.
    """
    H = 2 * np.diag(f_quad)
    g = np.asarray(f_lin, float)
    A = np.zeros((0, H.shape[0])) if A is None else np.asarray(A, float)
    b = np.zeros(0) if b is None else np.asarray(b, float)
    D, e = np.asarray(D, float), np.asarray(e, float)
    best_x, best_obj = None, np.inf
    p = D.shape[0]
    for r in range(p + 1):
        for active in itertools.combinations(range(p), r):
            C = np.vstack([A, D[list(active)]])
            d = np.concatenate([b, e[list(active)]])
            x, mult = _kkt(H, g, C, d)
            if np.abs(C @ x - d).max(initial=0) > 1e-7 * (1 + np.abs(d).max(initial=0)):
                continue
            if (D @ x - e).max(initial=-1) > 1e-7 * (1 + np.abs(e).max(initial=0)):
                continue
            if (mult[A.shape[0]:] < -1e-7).any():
                continue
            obj = x @ (np.asarray(f_quad) * x) + g @ x
            if obj < best_obj:
                best_x, best_obj = x, obj
    return best_x, best_obj


def random_feasible_qp(rng, n_max=15, p_max=10, m_max=3, strictly_convex=True):
    n = int(rng.integers(2, n_max + 1))
    p = int(rng.integers(1, p_max + 1))
    m = int(rng.integers(0, min(m_max, n - 1) + 1))
    f_quad = rng.uniform(0.1, 5.0, n) if strictly_convex else \
        np.where(rng.random(n) < 0.3, 0.0, rng.uniform(0.1, 5.0, n))
    f_lin = rng.normal(0, 5, n)
    A = rng.normal(size=(m, n))
    x_feas = rng.normal(size=n)
    b = A @ x_feas
    D = rng.normal(size=(p, n))
    e = D @ x_feas + rng.uniform(0, 2, p)
    return f_quad, f_lin, A, b, D, e


def vec(U):
    """Column-major vectorization."""
    return np.asarray(U).reshape(-1, order="F")
