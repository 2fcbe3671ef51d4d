"""The transaction producers' packing problem.

At prices ``p`` producers pick ``x`` in ``S = {x in {0,1}^n : A x <= b}`` to
maximize ``(q - A_p^T p) . x`` where ``A_p`` holds the priced rows.  Because
the objective is linear, optimizing over ``conv(S)`` gives the same value as
optimizing over ``S``; the exact solver below relies on that through its LP
bounds.

Ties between bundles whose objectives agree to ``TIE_TOL`` go to the bundle
with fewer transactions, then to the lexicographically smallest tuple of
positions in the input list.  Transactions with zero or negative net
utility are therefore never included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ATOL, Bundle, InputError, ResourceModel, Transaction, resource_matrix
from .lp import solve_box_lp

TIE_TOL = 1e-9
INTEGRALITY_TOL = 1e-6
MAX_BRUTEFORCE = 20
DEFAULT_NODE_BUDGET = 10**6


class CapacityError(ValueError):
    """Instance too large for exhaustive enumeration."""


class BudgetError(RuntimeError):
    """Branch-and-bound ran out of nodes; ``incumbent`` holds the best bundle found."""

    def __init__(self, message: str, incumbent: "PackingSolution", block_index: int | None = None):
        super().__init__(message)
        self.incumbent = incumbent
        self.block_index = block_index


@dataclass(frozen=True)
class PackingProblem:
    model: ResourceModel
    txs: tuple[Transaction, ...]
    prices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "txs", tuple(self.txs))
        p = np.array(self.prices, dtype=float).reshape(-1)
        if p.size != len(self.model.priced_indices):
            raise InputError(
                f"{p.size} prices given for {len(self.model.priced_indices)} priced rows"
            )
        p.setflags(write=False)
        object.__setattr__(self, "prices", p)
        A = resource_matrix(self.model, self.txs)
        A.setflags(write=False)
        object.__setattr__(self, "_A", A)

    @property
    def n(self) -> int:
        return len(self.txs)

    @property
    def A(self) -> np.ndarray:
        return self._A

    @property
    def utilities(self) -> np.ndarray:
        return np.array([tx.utility for tx in self.txs], dtype=float)

    @property
    def limited_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """``(A_lim, b_lim)`` restricted to rows that carry a limit."""
        lim = self.model.limits
        rows = np.isfinite(lim)
        return self._A[rows], lim[rows]


@dataclass(frozen=True)
class PackingSolution:
    bundle: Bundle
    objective: float
    certificate: str
    node_count: int = 0


@dataclass(frozen=True)
class FractionalSolution:
    x: np.ndarray
    objective: float
    max_fractionality: float = field(default=0.0)


def net_utilities(problem: PackingProblem) -> np.ndarray:
    """``q_j - sum_{i priced} p_i a_ij``; unpriced rows carry no fee."""
    Ap = problem.A[problem.model.priced_indices]
    return problem.utilities - Ap.T @ problem.prices


def bundle_objective(c, indices) -> float:
    return math.fsum(float(c[j]) for j in indices)


def _preferred(cand: tuple[float, tuple[int, ...]], best: tuple[float, tuple[int, ...]] | None) -> bool:
    """Whether ``cand`` beats ``best`` under objective-then-size-then-lex order."""
    if best is None:
        return True
    cv, ci = cand
    bv, bi = best
    if cv > bv + TIE_TOL:
        return True
    if cv < bv - TIE_TOL:
        return False
    if len(ci) != len(bi):
        return len(ci) < len(bi)
    return ci < bi


def enumerate_feasible(problem: PackingProblem, chunk: int = 1 << 15):
    """Yield ``(masks, X)`` chunks of feasible 0/1 bundles, ``X`` as a float matrix."""
    n = problem.n
    if n > MAX_BRUTEFORCE:
        raise CapacityError(f"{n} transactions exceed the enumeration cap of {MAX_BRUTEFORCE}")
    A_lim, b_lim = problem.limited_rows
    bits = np.arange(n, dtype=np.int64)
    total = 1 << n
    for start in range(0, total, chunk):
        masks = np.arange(start, min(start + chunk, total), dtype=np.int64)
        X = ((masks[:, None] >> bits) & 1).astype(float)
        if A_lim.shape[0]:
            ok = np.all(X @ A_lim.T <= b_lim + ATOL, axis=1)
            masks, X = masks[ok], X[ok]
        yield masks, X


def _mask_indices(mask: int, n: int) -> tuple[int, ...]:
    return tuple(j for j in range(n) if (mask >> j) & 1)


def solve_bruteforce(problem: PackingProblem) -> PackingSolution:
    """Exhaustive search over all ``2^n`` bundles (``n <= 20``)."""
    n = problem.n
    c = net_utilities(problem)
    best_val = -math.inf
    pool: list[int] = []
    for masks, X in enumerate_feasible(problem):
        if not masks.size:
            continue
        vals = X @ c
        top = vals.max()
        if top > best_val + TIE_TOL:
            best_val = top
            pool = []
        elif top < best_val - TIE_TOL:
            continue
        keep = vals >= best_val - TIE_TOL
        pool.extend(int(k) for k in masks[keep])
    best = None
    for mask in pool:
        idx = _mask_indices(mask, n)
        cand = (bundle_objective(c, idx), idx)
        if _preferred(cand, best):
            best = cand
    if best is None:
        raise InputError("no feasible bundle: the empty block violates a limit")
    return PackingSolution(Bundle.from_indices(n, best[1]), best[0], "exact", 1 << n)


def _lp(c, A, b):
    return solve_box_lp(c, A, b)


def solve_lp_relaxation(problem: PackingProblem) -> FractionalSolution:
    """``max c.x`` over ``{0 <= x <= 1, A x <= b}``."""
    c = net_utilities(problem)
    A_lim, b_lim = problem.limited_rows
    res = _lp(c, A_lim, b_lim)
    frac = float(np.max(np.minimum(res.x, 1.0 - res.x))) if res.x.size else 0.0
    x = res.x.copy()
    x.setflags(write=False)
    return FractionalSolution(x, res.objective, frac)


def solve_exact(problem: PackingProblem, node_budget: int = DEFAULT_NODE_BUDGET) -> PackingSolution:
    """LP relaxation first, then depth-first branch and bound on the most fractional variable."""
    n = problem.n
    c = net_utilities(problem)
    A_lim, b_lim = problem.limited_rows
    fits = np.all(A_lim <= b_lim[:, None] + ATOL, axis=0) if A_lim.shape[0] else np.ones(n, bool)
    cand = np.flatnonzero((c > 0) & fits)
    if cand.size == 0:
        return PackingSolution(Bundle.from_indices(n, ()), 0.0, "lp_integral", 1)

    Ac = A_lim[:, cand]
    cc = c[cand]
    root = _lp(cc, Ac, b_lim)
    if float(np.max(np.minimum(root.x, 1.0 - root.x))) <= INTEGRALITY_TOL:
        chosen = cand[root.x > 0.5]
        if A_lim.shape[0] == 0 or np.all(A_lim[:, chosen].sum(axis=1) <= b_lim + ATOL):
            idx = tuple(int(j) for j in chosen)
            return PackingSolution(Bundle.from_indices(n, idx), bundle_objective(c, idx), "lp_integral", 1)

    # incumbent: greedy fill in order of root LP value
    best = _greedy(cand, cc, Ac, b_lim, root.x, np.zeros(cand.size), c)

    above, below = _dominance(Ac, cc)
    k = cand.size
    stack = [(np.full(k, -1, dtype=np.int8))]  # -1 free, 0 fixed out, 1 fixed in
    nodes = 0
    while stack:
        fix = stack.pop()
        nodes += 1
        if nodes > node_budget:
            inc = PackingSolution(Bundle.from_indices(n, best[1]), best[0], "branch_and_bound", nodes)
            raise BudgetError(f"branch and bound exceeded {node_budget} nodes", inc)
        ones = fix == 1
        free = np.flatnonzero(fix == -1)
        slack = b_lim - Ac[:, ones].sum(axis=1)
        if np.any(slack < -ATOL):
            continue
        base = math.fsum(cc[ones])
        res = _lp(cc[free], Ac[:, free], np.maximum(slack, 0.0))
        bound = base + res.objective
        if bound < best[0] - TIE_TOL:
            continue
        frac = np.minimum(res.x, 1.0 - res.x)
        if frac.size == 0 or frac.max() <= INTEGRALITY_TOL:
            sel = np.concatenate([np.flatnonzero(ones), free[res.x > 0.5]])
            idx = tuple(sorted(int(cand[s_]) for s_ in sel))
            if A_lim.shape[0] and not np.all(A_lim[:, list(idx)].sum(axis=1) <= b_lim + ATOL):
                continue
            val = bundle_objective(c, idx)
            if _preferred((val, idx), best):
                best = (val, idx)
            continue
        # reduced-cost fixing: flipping a nonbasic variable costs at least |d|
        gap = bound - (best[0] - TIE_TOL)
        fix = fix.copy()
        fix[free[(res.x <= INTEGRALITY_TOL) & (-res.reduced > gap)]] = 0
        fix[free[(res.x >= 1 - INTEGRALITY_TOL) & (res.reduced > gap)]] = 1
        br = int(free[int(np.argmax(frac))])
        down = fix.copy()
        down[below[br]] = 0
        down[br] = 0
        up = fix.copy()
        up[above[br]] = 1
        up[br] = 1
        stack.append(down)
        if not np.any(fix[above[br]] == 0):
            stack.append(up)
    return PackingSolution(Bundle.from_indices(n, best[1]), best[0], "branch_and_bound", nodes)


def _greedy(cand, cc, Ac, b_lim, x, forced, c) -> tuple[float, tuple[int, ...]]:
    """Keep ``forced`` items, then add the rest in order of LP value and net utility while they fit."""
    room = b_lim - Ac[:, forced > 0.5].sum(axis=1)
    picked = [int(cand[s]) for s in np.flatnonzero(forced > 0.5)]
    for s in np.lexsort((-cc, -x)):
        if forced[s] <= 0.5 and np.all(Ac[:, s] <= room + ATOL):
            picked.append(int(cand[s]))
            room = room - Ac[:, s]
    idx = tuple(sorted(picked))
    return bundle_objective(c, idx), idx


def _dominance(A: np.ndarray, c: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """``above[j]``: items that dominate ``j``; ``below[i]``: items ``i`` dominates.

    ``i`` dominates ``j`` when it uses no more of any resource and has at
    least the net utility, with position breaking exact ties.  Some optimal
    bundle then contains ``i`` whenever it contains ``j``.
    """
    k = c.size
    le = np.all(A[:, :, None] <= A[:, None, :], axis=0)  # le[i, j]: a_i <= a_j
    ge = c[:, None] >= c[None, :]
    same = np.all(A[:, :, None] == A[:, None, :], axis=0) & (c[:, None] == c[None, :])
    idx = np.arange(k)
    dom = le & ge & (~same | (idx[:, None] < idx[None, :]))
    np.fill_diagonal(dom, False)
    above = [np.flatnonzero(dom[:, j]) for j in range(k)]
    below = [np.flatnonzero(dom[i, :]) for i in range(k)]
    return above, below


def solve(model: ResourceModel, txs: Sequence[Transaction], prices, method: str = "exact",
          node_budget: int = DEFAULT_NODE_BUDGET) -> PackingSolution:
    problem = PackingProblem(model, tuple(txs), prices)
    if method == "bruteforce":
        return solve_bruteforce(problem)
    return solve_exact(problem, node_budget)
