"""Network-designer losses and their Fenchel conjugates.

Every loss works on the priced rows only.  For a price vector ``p`` the
conjugate is ``sup_y p.y - loss(y)``; the maximizing usage ``y*(p)`` is what
the pricing rules compare observed usage against, and ``project`` maps a raw
price step back onto the set of prices where the conjugate is finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import ATOL, InputError

INF = math.inf
BRACKET_CAP = 2.0**40
SEARCH_TOL = 1e-9


class DomainError(ValueError):
    """Prices outside the domain of the conjugate."""

    def __init__(self, message: str, coordinates: Sequence[int] = ()):
        super().__init__(message)
        self.coordinates = tuple(int(i) for i in coordinates)


class UnboundedError(ArithmeticError):
    """The 1-D conjugate search could not bracket a maximizer."""


# --------------------------------------------------------------------------
# scalar building blocks for separable losses


class ScalarFunction:
    """Convex, nondecreasing ``phi: R -> R u {inf}`` with domain ``(-inf, upper]``.

    Subclasses provide ``__call__`` and ``right_slope``.  ``max_slope`` is the
    limit of the slope as ``z -> inf``; it is ``inf`` for superlinear functions
    (including any function with a finite ``upper``).
    """

    upper: float = INF
    max_slope: float = INF

    def __call__(self, z: float) -> float:
        raise NotImplementedError

    def right_slope(self, z: float) -> float:
        raise NotImplementedError

    def hint(self) -> float | None:
        return None

    @property
    def superlinear(self) -> bool:
        return self.max_slope == INF


@dataclass(frozen=True)
class Zero(ScalarFunction):
    max_slope: float = 0.0

    def __call__(self, z):
        return 0.0

    def right_slope(self, z):
        return 0.0


@dataclass(frozen=True)
class LinearCost(ScalarFunction):
    """``phi(z) = c (z)_+`` with ``c >= 0``: prices above ``c`` leave the domain."""

    c: float = 1.0

    def __post_init__(self):
        if self.c < 0:
            raise InputError("a nondecreasing linear cost needs c >= 0")

    @property
    def max_slope(self):
        return self.c

    def __call__(self, z):
        return self.c * max(z, 0.0)

    def right_slope(self, z):
        return self.c if z >= 0 else 0.0


@dataclass(frozen=True)
class Indicator(ScalarFunction):
    """0 for ``z <= bound``, ``inf`` above it."""

    bound: float = 0.0

    @property
    def upper(self):
        return self.bound

    def __call__(self, z):
        return 0.0 if z <= self.bound else INF

    def right_slope(self, z):
        return 0.0 if z < self.bound else INF

    def hint(self):
        return self.bound


@dataclass(frozen=True)
class PositiveSquare(ScalarFunction):
    """``coef * ((z - center)_+)^2``."""

    coef: float = 1.0
    center: float = 0.0

    def __post_init__(self):
        if self.coef <= 0:
            raise InputError("coef must be > 0")

    def __call__(self, z):
        d = max(z - self.center, 0.0)
        return self.coef * d * d

    def right_slope(self, z):
        return 2.0 * self.coef * max(z - self.center, 0.0)

    def hint(self):
        return self.center if self.center > 0 else None


@dataclass(frozen=True)
class Augmented(ScalarFunction):
    """``phi(z) + rho * ((z)_+)^2``; superlinear for any ``rho > 0``."""

    phi: ScalarFunction
    rho: float

    @property
    def upper(self):
        return self.phi.upper

    def __call__(self, z):
        base = self.phi(z)
        if base == INF:
            return INF
        zp = max(z, 0.0)
        return base + self.rho * zp * zp

    def right_slope(self, z):
        s = self.phi.right_slope(z)
        if s == INF:
            return INF
        return s + 2.0 * self.rho * max(z, 0.0)

    def hint(self):
        return self.phi.hint()


@dataclass(frozen=True)
class Custom(ScalarFunction):
    """Wrap an arbitrary convex nondecreasing callable.

    The right slope is taken by a forward difference unless ``slope`` is given.
    """

    fn: Callable[[float], float]
    slope: Callable[[float], float] | None = None
    upper: float = INF
    max_slope: float = INF
    h: float = 1e-7

    def __call__(self, z):
        if z > self.upper:
            return INF
        return float(self.fn(z))

    def right_slope(self, z):
        if z >= self.upper:
            return INF
        if self.slope is not None:
            return float(self.slope(z))
        step = min(self.h * max(1.0, abs(z)), (self.upper - z) if self.upper < INF else INF)
        return (float(self.fn(z + step)) - float(self.fn(z))) / step


def augment_superlinear(phi: ScalarFunction, rho: float) -> Augmented:
    if not rho > 0:
        raise InputError(f"rho must be > 0, got {rho}")
    return Augmented(phi, float(rho))


def scalar_conjugate(phi: ScalarFunction, p: float, start: float | None = None) -> tuple[float, float]:
    """Maximize ``p z - phi(z)`` over ``z``; returns ``(value, z*)``.

    The objective is concave, so its right slope ``p - phi'_+(z)`` is
    nonincreasing.  We bracket the first point where it turns negative by
    doubling outwards from ``start`` (``phi``'s own hint, else 1), then bisect
    to ``SEARCH_TOL``.  Among several maximizers the largest one is returned;
    for an indicator at ``p = 0`` that is its bound.
    """
    if p < 0:
        raise DomainError(f"price {p} < 0 for a nondecreasing loss term", [0])

    def falls(z):
        return p - phi.right_slope(z) < 0

    if start is None:
        start = phi.hint()
    hi = start if start is not None and start > 0 else 1.0
    lo = 0.0
    while not falls(hi):
        lo = hi
        hi *= 2.0
        if hi > BRACKET_CAP:
            raise UnboundedError(f"p z - phi(z) keeps increasing past {BRACKET_CAP:g} (p={p})")
    if lo == 0.0 and falls(lo):
        lo = -1.0
        while falls(lo):
            lo *= 2.0
            if lo < -BRACKET_CAP:
                raise UnboundedError(f"maximizer of p z - phi(z) escapes to -inf (p={p})")
    while hi - lo > SEARCH_TOL * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if falls(mid):
            hi = mid
        else:
            lo = mid
    z = hi
    if lo <= phi.upper <= hi:
        z = phi.upper
    elif z > phi.upper:
        z = lo
    value = p * z - phi(z)
    return float(value), float(z)


# --------------------------------------------------------------------------
# losses


@dataclass(frozen=True)
class ConjugateResult:
    value: float
    maximizer: np.ndarray | None = None


def _vec(values) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


def _check_dim(loss, v, what="price"):
    v = np.asarray(v, dtype=float)
    if v.shape != (loss.dim,):
        raise InputError(f"{what} vector has shape {v.shape}, loss has dimension {loss.dim}")
    return v


class Loss:
    """Common interface; see the concrete classes below."""

    kind: str = ""

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def __call__(self, y) -> float:
        raise NotImplementedError

    def conjugate(self, p) -> ConjugateResult:
        raise NotImplementedError

    def project(self, z) -> np.ndarray:
        raise NotImplementedError

    def in_domain(self, p) -> bool:
        return self.conjugate(p).value < INF

    def maximizer(self, p) -> np.ndarray | None:
        """``y*(p)``; raises :class:`DomainError` when ``p`` is outside the domain."""
        res = self.conjugate(p)
        if res.value == INF:
            raise DomainError(f"{self.kind}: prices {np.asarray(p).tolist()} outside dom g",
                              self._bad_coordinates(p))
        return res.maximizer

    def _bad_coordinates(self, p):
        p = np.asarray(p, dtype=float)
        return [i for i in range(p.size) if self.project(p)[i] != p[i]]

    @property
    def nonnegative_domain(self) -> bool:
        return False


@dataclass(frozen=True)
class EqualityTarget(Loss):
    """0 at ``y = b*`` and ``inf`` elsewhere."""

    target: np.ndarray
    kind: str = field(default="equality", init=False)

    def __post_init__(self):
        object.__setattr__(self, "target", _vec(self.target))

    @property
    def dim(self):
        return self.target.size

    def __call__(self, y):
        y = _check_dim(self, y, "usage")
        return 0.0 if np.allclose(y, self.target, rtol=0.0, atol=ATOL) else INF

    def conjugate(self, p):
        p = _check_dim(self, p)
        return ConjugateResult(float(self.target @ p), self.target.copy())

    def project(self, z):
        return _check_dim(self, z).copy()


@dataclass(frozen=True)
class InequalityTarget(Loss):
    """0 for ``y <= b*`` and ``inf`` otherwise."""

    target: np.ndarray
    kind: str = field(default="inequality", init=False)

    def __post_init__(self):
        object.__setattr__(self, "target", _vec(self.target))

    @property
    def dim(self):
        return self.target.size

    @property
    def nonnegative_domain(self):
        return True

    def __call__(self, y):
        y = _check_dim(self, y, "usage")
        return 0.0 if np.all(y <= self.target + ATOL) else INF

    def conjugate(self, p):
        p = _check_dim(self, p)
        if np.any(p < 0):
            return ConjugateResult(INF, None)
        return ConjugateResult(float(self.target @ p), self.target.copy())

    def project(self, z):
        return np.maximum(_check_dim(self, z), 0.0)


@dataclass(frozen=True)
class Quadratic(Loss):
    """``0.5 * ||y - b*||^2``."""

    target: np.ndarray
    kind: str = field(default="quadratic", init=False)

    def __post_init__(self):
        object.__setattr__(self, "target", _vec(self.target))

    @property
    def dim(self):
        return self.target.size

    def __call__(self, y):
        d = _check_dim(self, y, "usage") - self.target
        return 0.5 * float(d @ d)

    def conjugate(self, p):
        p = _check_dim(self, p)
        return ConjugateResult(float(p @ self.target + 0.5 * p @ p), self.target + p)

    def project(self, z):
        return _check_dim(self, z).copy()


@dataclass(frozen=True)
class Linear(Loss):
    """``u . y``.  The conjugate is finite only at ``p = u``, where every ``y`` maximizes."""

    u: np.ndarray
    kind: str = field(default="linear", init=False)

    def __post_init__(self):
        object.__setattr__(self, "u", _vec(self.u))

    @property
    def dim(self):
        return self.u.size

    def __call__(self, y):
        return float(self.u @ _check_dim(self, y, "usage"))

    def conjugate(self, p):
        p = _check_dim(self, p)
        if np.allclose(p, self.u, rtol=0.0, atol=ATOL):
            return ConjugateResult(0.0, None)
        return ConjugateResult(INF, None)

    def project(self, z):
        _check_dim(self, z)
        return self.u.copy()


@dataclass(frozen=True)
class SeparableNondecreasing(Loss):
    """``sum_i phi_i(y_i)`` with convex nondecreasing terms.

    With ``rho`` set, every term is augmented by ``rho * ((y_i)_+)^2`` so the
    conjugate is finite on the whole nonnegative orthant.  ``starts`` seeds
    the bracket of the 1-D search (typically the targets).
    """

    phis: tuple[ScalarFunction, ...]
    rho: float | None = None
    starts: tuple[float, ...] | None = None
    kind: str = field(default="separable", init=False)

    def __post_init__(self):
        phis = tuple(self.phis)
        for phi in phis:
            if phi(0.0) == INF:
                raise InputError("separable loss terms must be finite at 0")
        if self.rho is not None:
            phis = tuple(augment_superlinear(phi, self.rho) for phi in phis)
        object.__setattr__(self, "phis", phis)
        if self.starts is not None:
            if len(self.starts) != len(phis):
                raise InputError("starts must have one entry per term")
            object.__setattr__(self, "starts", tuple(float(s) for s in self.starts))

    @property
    def dim(self):
        return len(self.phis)

    @property
    def nonnegative_domain(self):
        return True

    @property
    def max_prices(self) -> np.ndarray:
        return np.array([phi.max_slope for phi in self.phis], dtype=float)

    def __call__(self, y):
        y = _check_dim(self, y, "usage")
        total = 0.0
        for phi, yi in zip(self.phis, y):
            v = phi(float(yi))
            if v == INF:
                return INF
            total += v
        return total

    def conjugate(self, p):
        p = _check_dim(self, p)
        if np.any(p < 0) or np.any(p > self.max_prices):
            return ConjugateResult(INF, None)
        value = 0.0
        ystar = np.empty(self.dim)
        for i, phi in enumerate(self.phis):
            start = self.starts[i] if self.starts is not None else None
            v, z = scalar_conjugate(phi, float(p[i]), start)
            value += v
            ystar[i] = z
        return ConjugateResult(value, ystar)

    def project(self, z):
        return np.clip(_check_dim(self, z), 0.0, self.max_prices)


# module-level spellings of the loss operations


def evaluate(loss: Loss, y) -> float:
    return loss(y)


def conjugate(loss: Loss, p) -> ConjugateResult:
    return loss.conjugate(p)


def project_domain(loss: Loss, z) -> np.ndarray:
    return loss.project(z)


_SCALARS = {
    "zero": lambda spec: Zero(),
    "linear": lambda spec: LinearCost(float(spec.get("c", 1.0))),
    "indicator": lambda spec: Indicator(float(spec["bound"])),
    "positive_square": lambda spec: PositiveSquare(float(spec.get("coef", 1.0)),
                                                   float(spec.get("center", 0.0))),
}


def scalar_from_spec(spec: dict) -> ScalarFunction:
    try:
        return _SCALARS[spec["kind"]](spec)
    except KeyError as exc:
        raise InputError(f"bad scalar function spec {spec!r}: missing {exc}") from None


def loss_from_spec(spec: dict, default_target=None) -> Loss:
    """Build a loss from a tagged record such as ``{"kind": "equality", "target": [10, 1]}``."""
    kind = spec.get("kind")
    target = spec.get("target", default_target)
    if kind in ("equality", "inequality", "quadratic"):
        if target is None:
            raise InputError(f"{kind} loss needs a target")
        cls = {"equality": EqualityTarget, "inequality": InequalityTarget, "quadratic": Quadratic}[kind]
        return cls(np.asarray(target, dtype=float))
    if kind == "linear":
        if "u" not in spec:
            raise InputError("linear loss needs 'u'")
        return Linear(np.asarray(spec["u"], dtype=float))
    if kind == "separable":
        terms = spec.get("terms")
        if terms is None:
            if target is None:
                raise InputError("separable loss needs 'terms' or a target")
            phis = [Indicator(float(t)) for t in target]
        else:
            phis = [scalar_from_spec(t) for t in terms]
        rho = spec.get("rho")
        starts = tuple(target) if target is not None and len(target) == len(phis) else None
        return SeparableNondecreasing(tuple(phis), rho=None if rho is None else float(rho), starts=starts)
    raise InputError(f"unknown loss kind {kind!r}")


def loss_to_spec(loss: Loss) -> dict:
    if isinstance(loss, (EqualityTarget, InequalityTarget, Quadratic)):
        return {"kind": loss.kind, "target": loss.target.tolist()}
    if isinstance(loss, Linear):
        return {"kind": "linear", "u": loss.u.tolist()}
    return {"kind": loss.kind}
