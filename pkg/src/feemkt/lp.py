"""Dense bounded-variable primal simplex for small packing LPs.

Solves ``max c.x  s.t.  A x <= b,  0 <= x <= u`` with ``b >= 0`` so the
all-slack basis is feasible and no phase one is needed.  Nonbasic variables
sit at either bound; a variable whose ratio test is won by its own opposite
bound just flips.  Pricing is Dantzig's rule, switching to Bland's rule
while pivots are degenerate so the method cannot cycle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOL = 1e-9


class LPInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    objective: float
    iterations: int
    # reduced costs of the structural variables at the final basis (0 when basic)
    reduced: np.ndarray | None = None


def solve_box_lp(c, A, b, upper=None, tol: float = TOL, max_iter: int | None = None) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    if n == 0:
        return LPResult(np.zeros(0), 0.0, 0, np.zeros(0))
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float).reshape(-1)
    m = A.shape[0]
    u = np.ones(n) if upper is None else np.asarray(upper, dtype=float)
    if np.any(b < -tol):
        raise LPInfeasible("right-hand side must be >= 0 for the slack start")
    b = np.maximum(b, 0.0)
    if m == 0:
        x = np.where(c > 0, u, 0.0)
        return LPResult(x, float(c @ x), 0, c.copy())

    N = n + m
    T = np.hstack([A, np.eye(m)])
    cost = np.concatenate([c, np.zeros(m)])
    ub = np.concatenate([u, np.full(m, np.inf)])
    basis = np.arange(n, N)
    is_basic = np.zeros(N, dtype=bool)
    is_basic[basis] = True
    at_upper = np.zeros(N, dtype=bool)
    xB = b.copy()
    if max_iter is None:
        max_iter = 50 * (N + 10)

    bland = False
    it = 0
    d = cost.copy()
    while it < max_iter:
        it += 1
        d = cost - cost[basis] @ T
        up = (~is_basic) & (~at_upper) & (d > tol)
        down = (~is_basic) & at_upper & (d < -tol)
        eligible = np.flatnonzero(up | down)
        if eligible.size == 0:
            break
        if bland:
            j = int(eligible[0])
        else:
            j = int(eligible[np.argmax(np.abs(d[eligible]))])
        s = 1.0 if up[j] else -1.0
        alpha = s * T[:, j]

        # ratio test
        t_best = ub[j]
        leave_row = -1
        leave_to_upper = False
        for i in range(m):
            a = alpha[i]
            if a > tol:
                t = xB[i] / a
                hit_upper = False
            elif a < -tol and np.isfinite(ub[basis[i]]):
                t = (ub[basis[i]] - xB[i]) / (-a)
                hit_upper = True
            else:
                continue
            t = max(t, 0.0)
            if t < t_best - tol:
                t_best, leave_row, leave_to_upper = t, i, hit_upper
            elif leave_row >= 0 and abs(t - t_best) <= tol and basis[i] < basis[leave_row]:
                t_best, leave_row, leave_to_upper = min(t, t_best), i, hit_upper
        if not np.isfinite(t_best):
            raise ArithmeticError("unbounded LP; bounded packing problems cannot reach this")

        bland = t_best <= tol
        xB = xB - t_best * alpha
        if leave_row < 0:
            at_upper[j] = not at_upper[j]
            continue

        entering_value = (ub[j] if at_upper[j] else 0.0) + s * t_best
        leaving = basis[leave_row]
        is_basic[leaving] = False
        at_upper[leaving] = leave_to_upper
        is_basic[j] = True
        at_upper[j] = False
        basis[leave_row] = j

        piv = T[leave_row, j]
        T[leave_row] /= piv
        others = np.arange(m) != leave_row
        T[others] -= np.outer(T[others, j], T[leave_row])
        xB[leave_row] = entering_value
    else:
        raise ArithmeticError(f"simplex did not converge in {max_iter} iterations")

    xfull = np.where(at_upper, ub, 0.0)
    xfull[basis] = xB
    x = np.clip(xfull[:n], 0.0, u)
    red = np.where(is_basic[:n], 0.0, d[:n])
    return LPResult(x, float(c @ x), it, red)
