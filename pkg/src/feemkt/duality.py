"""Exact dual-function laboratory for small (enumerable) instances.

The dual function splits as ``g(p) = loss*(p) + f(p)`` where ``f`` is the
producers' optimal packing value.  With at most 20 transactions every
feasible bundle can be listed, so ``f`` is the upper envelope of finitely
many affine functions ``Q_k - U_k . p`` and can be evaluated exactly on
whole grids at once.  The checks here compare those exact values against
the duality statements: weak duality, the zero-price condition, separating
cones, the maximum-price set and the line-search converse.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog, minimize

from .core import ATOL, Bundle, InputError, ResourceModel, Row, Transaction, model_from_spec, resource_matrix
from .losses import EqualityTarget, InequalityTarget, Linear, Loss, Quadratic, loss_from_spec
from .producer import (
    MAX_BRUTEFORCE,
    TIE_TOL,
    CapacityError,
    PackingProblem,
    enumerate_feasible,
    solve_bruteforce,
    solve_exact,
)

log = logging.getLogger(__name__)

INF = math.inf
SLACK = 1e-8


class UnsupportedError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class DualInstance:
    model: ResourceModel
    txs: tuple[Transaction, ...]
    loss: Loss

    def __post_init__(self):
        object.__setattr__(self, "txs", tuple(self.txs))
        if len(self.txs) > MAX_BRUTEFORCE:
            raise CapacityError(f"{len(self.txs)} transactions exceed the cap of {MAX_BRUTEFORCE}")
        if self.loss.dim != len(self.model.priced_indices):
            raise InputError(
                f"loss has dimension {self.loss.dim}, model prices {len(self.model.priced_indices)} rows"
            )
        resource_matrix(self.model, self.txs)

    @property
    def m(self) -> int:
        return self.loss.dim

    @property
    def q(self) -> np.ndarray:
        return np.array([tx.utility for tx in self.txs], dtype=float)

    @property
    def A_priced(self) -> np.ndarray:
        return resource_matrix(self.model, self.txs)[self.model.priced_indices]

    def problem(self, p) -> PackingProblem:
        return PackingProblem(self.model, self.txs, p)

    @cached_property
    def feasible(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(X, Q, U)``: feasible bundles, their utilities and priced usage."""
        chunks = [X for _, X in enumerate_feasible(self.problem(np.zeros(self.m)))]
        X = np.vstack(chunks) if chunks else np.zeros((0, len(self.txs)))
        return X, X @ self.q, X @ self.A_priced.T


def packing_value(instance: DualInstance, P) -> np.ndarray:
    """``f`` at one price vector or at each row of a price matrix."""
    _, Q, U = instance.feasible
    P = np.asarray(P, dtype=float)
    single = P.ndim == 1
    P2 = np.atleast_2d(P)
    out = np.empty(P2.shape[0])
    step = max(1, 2_000_000 // max(1, Q.size))
    for s in range(0, P2.shape[0], step):
        out[s:s + step] = np.max(Q[None, :] - P2[s:s + step] @ U.T, axis=1)
    return out[0] if single else out


def dual_value(instance: DualInstance, p) -> float:
    p = np.asarray(p, dtype=float)
    conj = instance.loss.conjugate(p).value
    if conj == INF:
        return INF
    return conj + float(packing_value(instance, p))


def dual_values(instance: DualInstance, P) -> np.ndarray:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    conj = np.array([instance.loss.conjugate(p).value for p in P])
    out = np.full(P.shape[0], INF)
    ok = conj < INF
    if ok.any():
        out[ok] = conj[ok] + packing_value(instance, P[ok])
    return out


def dual_subgradient(instance: DualInstance, p) -> np.ndarray:
    """``y*(p) - A x*(p)`` with ``x*`` from exhaustive packing."""
    p = np.asarray(p, dtype=float)
    ystar = instance.loss.maximizer(p)
    if ystar is None:
        raise UnsupportedError(f"{instance.loss.kind} loss has no unique conjugate maximizer")
    sol = solve_bruteforce(instance.problem(p))
    return ystar - instance.A_priced @ sol.bundle.included.astype(float)


def primal_value(instance: DualInstance, bundles: Sequence, weights) -> float:
    """``q.x - loss(A x)`` for ``x = sum_k w_k bundle_k``."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or len(bundles) != w.size or w.size == 0:
        raise InputError("need one weight per bundle")
    if np.any(w < -ATOL) or abs(w.sum() - 1.0) > 1e-9:
        raise InputError("weights must form a probability distribution")
    xs = np.array([b.included if isinstance(b, Bundle) else b for b in bundles], dtype=float)
    x = w @ xs
    lv = instance.loss(instance.A_priced @ x)
    if lv == INF:
        return -INF
    return float(instance.q @ x - lv)


def weak_duality_check(
    instance: DualInstance,
    p,
    num_samples: int = 1000,
    seed: int = 0,
    dual: Callable[[DualInstance, np.ndarray], float] | None = None,
) -> bool:
    """Sample points of ``conv(S)`` and confirm ``g(p)`` bounds every primal value."""
    dual = dual or dual_value
    g = dual(instance, np.asarray(p, dtype=float))
    X, Q, U = instance.feasible
    rng = np.random.default_rng(seed)
    K = X.shape[0]
    for s in range(num_samples):
        if s < min(K, num_samples // 2):
            idx, w = np.array([s]), np.array([1.0])
        else:
            k = int(rng.integers(1, min(4, K) + 1))
            idx = rng.choice(K, size=k, replace=False)
            w = rng.dirichlet(np.ones(k))
        val = primal_value(instance, list(X[idx]), w)
        if g < val - SLACK:
            log.info("weak duality violated: g=%r < primal=%r at weights %r", g, val, w)
            return False
    return True


# --------------------------------------------------------------------------
# minimizing g


@dataclass(frozen=True)
class DualMinimum:
    p: np.ndarray
    value: float
    method: str
    evaluations: int
    exhausted: bool = False


def default_price_bound(instance: DualInstance) -> float:
    """Per-axis price beyond which no transaction touching that resource is worth including."""
    A = instance.A_priced
    nz = A[A > 0]
    qmax = float(np.max(instance.q, initial=0.0))
    if nz.size == 0 or qmax <= 0:
        return 1.0
    return qmax / float(nz.min())


def default_grid_box(instance: DualInstance) -> list[tuple[float, float]]:
    pmax = default_price_bound(instance)
    lo = 0.0 if instance.loss.nonnegative_domain else -pmax
    return [(lo, pmax)] * instance.m


def price_grid(bounds: Sequence[tuple[float, float]], resolution: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, resolution) for lo, hi in bounds]
    # keep 0 on the grid whenever it is inside the box
    for a, (lo, hi) in zip(axes, bounds):
        if lo < 0 < hi:
            a[np.argmin(np.abs(a))] = 0.0
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def minimize_dual(
    instance: DualInstance,
    method: str = "grid",
    budget: int | None = None,
    *,
    bounds: Sequence[tuple[float, float]] | None = None,
    resolution: int = 200,
    eta: float = 1e-2,
    start=None,
    tol: float = 1e-9,
    diminishing: bool = False,
) -> DualMinimum:
    """Minimize ``g`` by exhaustive grid scan or by projected subgradient descent.

    Descent uses the exact subgradient ``y*(p) - A x*(p)`` and reports the
    best iterate seen.  ``exhausted`` is set when the budget ran out first.
    With ``diminishing`` the step at iteration ``k`` is ``eta / sqrt(k)``.
    """
    if method == "grid":
        if instance.m > 3:
            raise UnsupportedError("grid search supports at most 3 priced resources")
        bounds = list(bounds) if bounds is not None else default_grid_box(instance)
        P = price_grid(bounds, resolution)
        exhausted = False
        if budget is not None and P.shape[0] > budget:
            P, exhausted = P[:budget], True
        vals = dual_values(instance, P)
        # among tied minimizers report the one closest to the origin
        ties = np.flatnonzero(vals <= vals.min() + 1e-12)
        k = int(ties[np.argmin(np.linalg.norm(P[ties], axis=1))])
        return DualMinimum(P[k].copy(), float(vals[k]), "grid", P.shape[0], exhausted)
    if method == "descent":
        budget = 5000 if budget is None else budget
        loss = instance.loss
        p = loss.project(np.zeros(instance.m) if start is None else np.asarray(start, dtype=float))
        best_p, best_v = p.copy(), dual_value(instance, p)
        for it in range(1, budget + 1):
            grad = dual_subgradient(instance, p)
            if np.max(np.abs(grad), initial=0.0) <= tol:
                return DualMinimum(p, dual_value(instance, p), "descent", it, False)
            h = eta / math.sqrt(it) if diminishing else eta
            p = loss.project(p - h * grad)
            v = dual_value(instance, p)
            if v < best_v:
                best_p, best_v = p.copy(), v
        return DualMinimum(best_p, best_v, "descent", budget, True)
    raise InputError(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# extremal sets and the zero-price condition


@dataclass(frozen=True)
class LossMinimizers:
    """``Y*``: a single point, or the box ``{0 <= y <= upper}``."""

    kind: str
    point: np.ndarray

    def contains(self, y) -> bool:
        y = np.asarray(y, dtype=float)
        if self.kind == "point":
            return bool(np.allclose(y, self.point, rtol=0.0, atol=ATOL))
        return bool(np.all(y >= -ATOL) and np.all(y <= self.point + ATOL))

    def support(self, p) -> float:
        """``max_{y in Y*} p.y``."""
        p = np.asarray(p, dtype=float)
        if self.kind == "point":
            return float(p @ self.point)
        return float(np.sum(np.maximum(p * self.point, 0.0)))

    def project(self, y) -> np.ndarray:
        if self.kind == "point":
            return self.point.copy()
        return np.clip(y, 0.0, self.point)


@dataclass(frozen=True)
class ExtremalSets:
    X_star: tuple[Bundle, ...]
    AX_star: np.ndarray
    Y_star: LossMinimizers
    sup_utility: float = 0.0
    inf_loss: float = 0.0


def loss_minimizers(loss: Loss) -> LossMinimizers:
    if isinstance(loss, (EqualityTarget, Quadratic)):
        return LossMinimizers("point", loss.target.copy())
    if isinstance(loss, InequalityTarget):
        return LossMinimizers("box", loss.target.copy())
    raise UnsupportedError(f"minimizers of a {loss.kind} loss are not supported")


def extremal_sets(instance: DualInstance) -> ExtremalSets:
    Ystar = loss_minimizers(instance.loss)
    X, Q, U = instance.feasible
    top = float(Q.max())
    keep = np.flatnonzero(Q >= top - TIE_TOL)
    bundles = tuple(Bundle(X[k].astype(bool)) for k in keep)
    return ExtremalSets(bundles, U[keep].copy(), Ystar, top, 0.0)


def _hull_meets(points: np.ndarray, Y: LossMinimizers) -> bool:
    """Whether ``conv(points)`` intersects ``Y`` (a point or a box)."""
    k, m = points.shape
    if k == 1:
        return Y.contains(points[0])
    A_eq = [np.ones(k)]
    b_eq = [1.0]
    A_ub, b_ub = None, None
    if Y.kind == "point":
        A_eq = np.vstack([np.ones(k), points.T])
        b_eq = np.concatenate([[1.0], Y.point])
    else:
        A_ub = np.vstack([points.T, -points.T])
        b_ub = np.concatenate([Y.point + ATOL, np.full(m, ATOL)])
        A_eq = np.ones((1, k))
    res = linprog(np.zeros(k), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(0, None)] * k, method="highs")
    return res.status == 0


def minimal_demand_disjoint(sets: ExtremalSets) -> bool:
    """True iff ``A X*`` and ``Y*`` do not meet."""
    return not _hull_meets(sets.AX_star, sets.Y_star)


def cone_contains(p, sets: ExtremalSets, strict: bool = False, tol: float = ATOL) -> bool:
    """Whether ``p.(A x - y) >= 0`` for every ``x in X*``, ``y in Y*`` (``> 0`` when strict)."""
    p = np.asarray(p, dtype=float)
    margin = float(np.min(sets.AX_star @ p)) - sets.Y_star.support(p)
    return margin > tol if strict else margin >= -tol


def separating_direction(sets: ExtremalSets) -> np.ndarray | None:
    """A strict separator ``p`` of ``A X*`` and ``Y*`` when one is easy to find.

    Tries ``v - proj_Y(v)`` for every extremal usage ``v`` and for their centroid.
    """
    cands = list(sets.AX_star) + [sets.AX_star.mean(axis=0)]
    for v in cands:
        p = v - sets.Y_star.project(v)
        if np.any(p != 0) and cone_contains(p, sets, strict=True):
            return p
    return None


# --------------------------------------------------------------------------
# maximum prices


def _resource_bundles(instance: DualInstance):
    X, Q, U = instance.feasible
    costly = np.any(np.abs(U) > ATOL, axis=1)
    return Q[costly], U[costly]


def max_price_member(instance: DualInstance, p) -> bool:
    """``p >= 0`` and ``p.A x > q.x`` for every feasible bundle that uses resources."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        return False
    Q, U = _resource_bundles(instance)
    return bool(np.all(U @ p > Q))


def max_price_threshold(instance: DualInstance) -> float:
    """The smallest ``t`` with ``t 1`` on the boundary of the maximum-price set.

    ``t 1`` belongs to the set exactly when ``t`` exceeds this value.
    """
    Q, U = _resource_bundles(instance)
    if Q.size == 0:
        return 0.0
    return max(0.0, float(np.max(Q / U.sum(axis=1))))


# --------------------------------------------------------------------------
# partial converse


def converse_linesearch(instance: DualInstance, p, t0: float = 1.0, steps: int = 61):
    """Sweep ``t = 2^-20 t0 2^j`` for a point with ``g(t p) < g(0)``.

    Returns ``(t, g(t p))`` or ``None`` when the sweep finds nothing.
    """
    p = np.asarray(p, dtype=float)
    if isinstance(instance.loss, Linear):
        raise PreconditionError("a linear loss contains lines in every direction")
    sets = extremal_sets(instance)
    if not minimal_demand_disjoint(sets):
        raise PreconditionError("A X* meets Y*; no descent direction from 0 exists")
    if not cone_contains(p, sets, strict=True):
        raise PreconditionError("direction is not in the interior of the separating cone")
    g0 = dual_value(instance, np.zeros(instance.m))
    for j in range(steps):
        t = 2.0**-20 * t0 * 2.0**j
        g = dual_value(instance, t * p)
        if g < g0 - 1e-9:
            return t, g
    return None


# --------------------------------------------------------------------------
# primal optimum (independent of the dual machinery)


def primal_optimum(instance: DualInstance, max_bundles: int = 4096) -> float | None:
    """Optimal value of ``max q.x - loss(A x)`` over ``conv(S)``, solved over bundle weights."""
    X, Q, U = instance.feasible
    K = Q.size
    if K > max_bundles:
        return None
    loss = instance.loss
    bounds = [(0, None)] * K
    if isinstance(loss, (EqualityTarget, InequalityTarget, Linear)):
        c = -Q.copy()
        A_eq, b_eq, A_ub, b_ub = [np.ones(K)], [1.0], None, None
        if isinstance(loss, EqualityTarget):
            A_eq = np.vstack([np.ones(K), U.T])
            b_eq = np.concatenate([[1.0], loss.target])
        elif isinstance(loss, InequalityTarget):
            A_ub, b_ub = U.T, loss.target
            A_eq = np.ones((1, K))
        else:
            c = c + U @ loss.u
            A_eq = np.ones((1, K))
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
        if res.status == 2:
            return -INF
        return float(-res.fun)
    if isinstance(loss, Quadratic):
        b = loss.target

        def obj(w):
            d = U.T @ w - b
            return -(Q @ w) + 0.5 * d @ d

        def jac(w):
            return -Q + U @ (U.T @ w - b)

        best = INF
        starts = [np.full(K, 1.0 / K)] + [np.eye(K)[int(np.argmax(Q))]]
        for w0 in starts:
            res = minimize(obj, w0, jac=jac, method="SLSQP", bounds=[(0, 1)] * K,
                           constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1.0,
                                         "jac": lambda w: np.ones_like(w)}],
                           options={"ftol": 1e-14, "maxiter": 1000})
            # SLSQP can stop slightly off the simplex; score the projected weights
            w = np.clip(res.x, 0.0, None)
            best = min(best, float(obj(w / w.sum())))
        return -best
    raise UnsupportedError(f"no primal solver for a {loss.kind} loss")


# --------------------------------------------------------------------------
# property battery (driven by the ``verify`` command)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    witness: dict = field(default_factory=dict)


def _lipschitz(instance: DualInstance, bounds) -> float:
    _, _, U = instance.feasible
    umax = float(np.max(np.abs(U).sum(axis=1), initial=0.0))
    pmax = max(max(abs(lo), abs(hi)) for lo, hi in bounds)
    loss = instance.loss
    if isinstance(loss, Quadratic):
        return umax + float(np.abs(loss.target).sum()) + instance.m * pmax
    if hasattr(loss, "target"):
        return umax + float(np.abs(loss.target).sum())
    return umax


def run_battery(
    instance: DualInstance,
    *,
    resolution: int | None = None,
    num_samples: int = 1000,
    seed: int = 0,
    bounds=None,
) -> list[Check]:
    """Run every duality check on ``instance``; each :class:`Check` records its witness."""
    checks: list[Check] = []
    m = instance.m
    if resolution is None:
        resolution = {1: 2001, 2: 201, 3: 41}.get(m, 21)
    bounds = list(bounds) if bounds is not None else default_grid_box(instance)
    zero = np.zeros(m)
    g0 = dual_value(instance, zero)
    grid = minimize_dual(instance, "grid", bounds=bounds, resolution=resolution)
    P = price_grid(bounds, resolution)
    G = dual_values(instance, P)
    rng = np.random.default_rng(seed)

    # weak duality at a spread of prices
    probes = [zero, grid.p] + [P[k] for k in rng.choice(P.shape[0], size=min(8, P.shape[0]), replace=False)]
    bad = [p.tolist() for p in probes if dual_value(instance, p) < INF
           and not weak_duality_check(instance, p, num_samples, seed)]
    checks.append(Check("weak_duality", not bad, f"{len(probes)} price vectors x {num_samples} samples",
                        {"violations": bad}))

    # convexity of g along random chords
    worst = 0.0
    for _ in range(200):
        i, j = rng.integers(P.shape[0], size=2)
        if G[i] == INF or G[j] == INF:
            continue
        mid = dual_value(instance, 0.5 * (P[i] + P[j]))
        worst = max(worst, mid - 0.5 * (G[i] + G[j]))
    checks.append(Check("dual_convexity", bool(worst <= 1e-8), f"max midpoint excess {worst:.3g}"))

    # grid discretization error bound, used by the two cross-checks below
    h = max((hi - lo) / (resolution - 1) for lo, hi in bounds)
    grid_tol = _lipschitz(instance, bounds) * h + 1e-6

    # strong duality against an independent primal solve
    primal = None
    try:
        primal = primal_optimum(instance)
    except UnsupportedError:
        pass
    if primal is not None and math.isfinite(primal):
        gap = grid.value - primal
        checks.append(Check("strong_duality", -1e-6 <= gap <= grid_tol,
                            f"grid min {grid.value:.9g} vs primal optimum {primal:.9g} (tol {grid_tol:.3g})",
                            {"p": grid.p.tolist()}))

    # descent never beats the grid by more than the grid's own error
    try:
        desc = minimize_dual(instance, "descent", budget=5000)
        checks.append(Check("descent_consistent", desc.value >= grid.value - grid_tol,
                            f"descent {desc.value:.9g} vs grid {grid.value:.9g} (tol {grid_tol:.3g})",
                            {"p_descent": desc.p.tolist(), "p_grid": grid.p.tolist()}))
    except UnsupportedError:
        pass

    try:
        sets = extremal_sets(instance)
    except UnsupportedError as exc:
        checks.append(Check("extremal_sets", True, f"skipped: {exc}"))
        return checks

    disjoint = minimal_demand_disjoint(sets)
    witness = {"AX_star": sets.AX_star.tolist(), "Y_star": [sets.Y_star.kind, sets.Y_star.point.tolist()]}
    if disjoint:
        ok = float(np.max(np.abs(grid.p))) > 0 and grid.value < g0 - 1e-12
        checks.append(Check("minimal_demand_nonzero_price", ok,
                            f"A X* and Y* disjoint; grid minimizer {grid.p.tolist()} g={grid.value:.9g} "
                            f"vs g(0)={g0:.9g}", witness))
    else:
        ok = g0 <= grid.value + 1e-9
        checks.append(Check("zero_price_optimal", ok,
                            f"A X* meets Y*; g(0)={g0:.9g} vs grid min {grid.value:.9g}", witness))

    near = np.flatnonzero(G <= g0 + 1e-9)
    outside = [P[k].tolist() for k in near if not cone_contains(P[k], sets)]
    checks.append(Check("near_minimizers_in_cone", not outside,
                        f"{near.size} grid prices with g <= g(0)", {"outside": outside[:5]}))

    if disjoint:
        d = separating_direction(sets)
        if d is None:
            checks.append(Check("converse_linesearch", True, "no strict separator found; skipped"))
        else:
            found = converse_linesearch(instance, d)
            checks.append(Check("converse_linesearch", found is not None,
                                f"direction {d.tolist()} -> {found}", {"direction": d.tolist()}))

    t = max_price_threshold(instance)
    t_in = t * (1 + 1e-6) + 1e-9
    member = max_price_member(instance, np.full(m, t_in))
    sol = solve_exact(instance.problem(np.full(m, t_in)))
    costless = bool(np.all(np.abs(instance.A_priced @ sol.bundle.included) <= ATOL))
    boundary_out = t == 0 or not max_price_member(instance, np.full(m, t * (1 - 1e-6)))
    checks.append(Check("max_price", member and costless and boundary_out,
                        f"threshold t={t:.9g}; t(1+1e-6)*1 in P={member}, block costless={costless}, "
                        f"t(1-1e-6)*1 outside P={boundary_out}"))
    return checks


# --------------------------------------------------------------------------
# instance construction


def instance_from_dict(data: dict) -> DualInstance:
    """Parse ``{"resources": [...], "transactions": [...], "loss": {...}}``."""
    try:
        model = model_from_spec(data["resources"])
        txs = []
        for j, t in enumerate(data["transactions"]):
            res = t["resources"]
            if len(res) == len(model.base_indices) and len(res) != model.num_resources:
                res = model.expand(res)
            txs.append(Transaction(t.get("id", j), res, float(t["utility"])))
        loss = loss_from_spec(data["loss"], model.targets.tolist())
    except KeyError as exc:
        raise InputError(f"instance is missing field {exc}") from None
    return DualInstance(model, tuple(txs), loss)


def random_instance(rng: np.random.Generator, n: int = 5, m: int = 1, loss: str = "equality",
                    overlap: bool = False) -> DualInstance:
    """Small random instance with targets placed relative to the zero-price demand.

    With ``overlap`` the target is set to the usage of the free-demand optimum,
    otherwise it is pulled strictly inside ``A conv(S)`` away from that usage.
    """
    for _ in range(1000):
        A = rng.uniform(0.5, 1.0, size=(m, n)) * rng.uniform(0.5, 1.5, size=(m, 1))
        q = rng.uniform(0.0, 5.0, size=n)
        limits = A.sum(axis=1) * rng.uniform(0.4, 0.8, size=m)
        model = ResourceModel(tuple(Row(f"r{i}", float(limits[i]), 1.0, True) for i in range(m)))
        txs = tuple(Transaction(j, A[:, j], q[j]) for j in range(n))
        probe = DualInstance(model, txs, EqualityTarget(np.ones(m)))
        X, Q, U = probe.feasible
        top = np.flatnonzero(Q >= Q.max() - TIE_TOL)
        if top.size != 1:
            continue
        free = U[top[0]]
        if overlap:
            target = free.copy()
        else:
            centroid = U.mean(axis=0)
            target = 0.5 * free + 0.5 * centroid if loss != "inequality" else 0.6 * free
            if np.allclose(target, free):
                continue
        cls = {"equality": EqualityTarget, "quadratic": Quadratic, "inequality": InequalityTarget}[loss]
        rows = tuple(Row(f"r{i}", float(limits[i]), float(target[i]), True) for i in range(m))
        inst = DualInstance(ResourceModel(rows), txs, cls(target))
        return inst
    raise RuntimeError("could not construct an instance")
