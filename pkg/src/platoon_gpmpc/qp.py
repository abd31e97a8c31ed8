"""Dense convex QP solver (Goldfarb-Idnani dual active set).

Solves ``min 0.5 x^T H x + f^T x  s.t.  G x >= h`` for a positive definite
``H``. The dual method starts from the unconstrained minimiser, so no
feasible initial point is needed, and it detects primal infeasibility
directly. Problem sizes here are a few dozen variables, so the active-set
linear algebra is recomputed densely at every iteration instead of being
updated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotPositiveDefinite
from .linalg import cholesky, chol_solve


@dataclass
class QpResult:
    x: np.ndarray
    multipliers: np.ndarray  # one per inequality row, zero when inactive
    active: list[int] = field(default_factory=list)
    feasible: bool = True
    iterations: int = 0
    objective: float = float("nan")


def kkt_residual(hess, lin, g, h, res: QpResult) -> float:
    """Max-norm of stationarity, primal and complementarity violations."""
    x, lam = res.x, res.multipliers
    stat = hess @ x + lin - g.T @ lam
    slack = g @ x - h
    parts = [np.abs(stat), np.maximum(-slack, 0.0), np.maximum(-lam, 0.0), np.abs(lam * slack)]
    return float(max((p.max() if p.size else 0.0) for p in parts))


def _refine(hinv, lin, rows, rhs):
    """Exact minimiser and multipliers with ``rows @ x == rhs``; removes drift from partial steps."""
    hn = hinv @ rows.T
    u = np.linalg.solve(rows @ hn, rhs + hn.T @ lin)
    return hinv @ (rows.T @ u - lin), u


def solve_dual_active_set(hess, lin, g, h, max_iter: int = 500, tol: float = 1e-9) -> QpResult:
    hess = np.asarray(hess, dtype=float)
    lin = np.asarray(lin, dtype=float)
    g = np.atleast_2d(np.asarray(g, dtype=float)).reshape(-1, hess.shape[0])
    h = np.asarray(h, dtype=float).reshape(-1)
    n, n_con = hess.shape[0], g.shape[0]
    try:
        factor = cholesky(hess, (0.0,))
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite("QP Hessian must be positive definite") from exc
    hinv = chol_solve(factor, np.eye(n))
    x = -hinv @ lin
    active: list[int] = []
    u = np.zeros(0)
    row_scale = np.maximum(np.linalg.norm(g, axis=1), 1.0)

    it = 0
    while it < max_iter:
        it += 1
        viol = (g @ x - h) / row_scale
        if active:
            viol[active] = np.inf
        p = int(np.argmin(viol)) if n_con else -1
        if n_con == 0 or viol[p] >= -tol:
            lam = np.zeros(n_con)
            lam[active] = u
            obj = 0.5 * x @ hess @ x + lin @ x
            return QpResult(x, lam, active, True, it, float(obj))
        n_p = g[p]
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if active:
                nmat = g[active].T
                hn = hinv @ nmat
                r = np.linalg.solve(nmat.T @ hn, hn.T @ n_p)
                z = hinv @ n_p - hn @ r
            else:
                r = np.zeros(0)
                z = hinv @ n_p
            # partial step: largest step keeping active multipliers non-negative
            t1, drop = np.inf, -1
            for j, rj in enumerate(r):
                if rj > tol:
                    ratio = u_plus[j] / rj
                    if ratio < t1:
                        t1, drop = ratio, j
            zn = float(z @ n_p)
            # z is H^-1 n_p minus its projection; below cancellation level it is zero,
            # i.e. n_p lies in the span of the active normals
            free = np.linalg.norm(hinv @ n_p)
            degenerate = np.linalg.norm(z) <= 1e-9 * free or zn <= 0.0
            t2 = (h[p] - n_p @ x) / zn if not degenerate else np.inf
            if not np.isfinite(t1) and not np.isfinite(t2):
                lam = np.zeros(n_con)
                lam[active] = u_plus[:-1]
                return QpResult(x, lam, active, False, it)
            t = min(t1, t2)
            if np.isfinite(t2):
                x = x + t * z
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t2 <= t1:
                active.append(p)
                x, u = _refine(hinv, lin, g[active], h[active])
                break
            del active[drop]
            u_plus = np.delete(u_plus, drop)
            if it >= max_iter:
                break
    lam = np.zeros(n_con)
    lam[active] = u[: len(active)]
    return QpResult(x, lam, active, False, it)
