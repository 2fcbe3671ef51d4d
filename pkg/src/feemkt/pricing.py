"""On-chain price updates driven by the observed block.

The gradient of the dual function at ``p`` is ``y*(p) - A x*``; the network
only sees the built block ``x0`` and uses ``y*(p) - A x0`` in its place.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import InputError
from .losses import Loss

DEFAULT_ETA = 1e-2
DEFAULT_MULTIPLICATIVE_START = 1e-3
FIXED_POINT_TOL = 1e-9


class StateError(ValueError):
    """Price state incompatible with the chosen rule."""


class RuleKind(str, Enum):
    PROJECTED_GRADIENT = "projected_gradient"
    EXPONENTIAL = "exponential"
    LOG_EXPONENTIAL = "log_exponential"


@dataclass(frozen=True)
class PriceState:
    prices: np.ndarray
    block_index: int = 0

    def __post_init__(self):
        p = np.array(self.prices, dtype=float).reshape(-1)
        p.setflags(write=False)
        object.__setattr__(self, "prices", p)


@dataclass(frozen=True)
class UpdateRule:
    """``step`` is a scalar learning rate or one rate per priced resource."""

    kind: RuleKind = RuleKind.PROJECTED_GRADIENT
    step: float | tuple[float, ...] = DEFAULT_ETA

    def __post_init__(self):
        object.__setattr__(self, "kind", RuleKind(self.kind))
        step = self.step
        if np.ndim(step) == 0:
            step = float(step)
            ok = step > 0
        else:
            step = tuple(float(s) for s in step)
            ok = len(step) > 0 and all(s > 0 for s in step)
        if not ok:
            raise InputError(f"step sizes must be strictly positive, got {self.step}")
        object.__setattr__(self, "step", step)

    def rates(self, m: int) -> np.ndarray:
        """The diagonal of ``D`` (``eta * 1`` for a scalar step)."""
        if isinstance(self.step, float):
            return np.full(m, self.step)
        if len(self.step) != m:
            raise InputError(f"{len(self.step)} per-resource rates for {m} priced resources")
        return np.array(self.step)

    @property
    def multiplicative(self) -> bool:
        return self.kind is not RuleKind.PROJECTED_GRADIENT

    def default_start(self, m: int) -> np.ndarray:
        if self.multiplicative:
            return np.full(m, DEFAULT_MULTIPLICATIVE_START)
        return np.zeros(m)


def grad_estimate(y_star, observed_usage) -> np.ndarray:
    """``y* - A x0`` over the priced rows."""
    y_star = np.asarray(y_star, dtype=float)
    observed = np.asarray(observed_usage, dtype=float)
    if y_star.shape != observed.shape:
        raise InputError(f"y* shape {y_star.shape} vs observed usage shape {observed.shape}")
    return y_star - observed


def step(rule: UpdateRule, loss: Loss, state: PriceState, grad) -> PriceState:
    p = state.prices
    grad = np.asarray(grad, dtype=float)
    if grad.shape != p.shape:
        raise InputError(f"gradient shape {grad.shape} vs price shape {p.shape}")
    H = rule.rates(p.size)
    if rule.kind is RuleKind.PROJECTED_GRADIENT:
        new = loss.project(p - H * grad)
    else:
        if np.any(p <= 0):
            bad = np.flatnonzero(p <= 0).tolist()
            raise StateError(f"multiplicative rules need strictly positive prices; p[{bad}] <= 0")
        if rule.kind is RuleKind.EXPONENTIAL:
            new = p * np.exp(-H * grad)
        else:
            new = p * np.exp(-H * (p * grad))
        new = loss.project(new)
    return PriceState(new, state.block_index + 1)


def is_fixed_point(grad, tol: float = FIXED_POINT_TOL) -> bool:
    if not tol > 0:
        raise InputError("tol must be > 0")
    grad = np.asarray(grad, dtype=float)
    return bool(grad.size == 0 or np.max(np.abs(grad)) <= tol)


def rule_from_spec(spec: dict) -> UpdateRule:
    """``{"rule": "projected_gradient", "eta": 0.01}`` or ``{"rule": ..., "eta_per_resource": [...]}``."""
    kind = spec.get("rule", RuleKind.PROJECTED_GRADIENT.value)
    if "eta_per_resource" in spec:
        step_ = tuple(spec["eta_per_resource"])
    else:
        step_ = spec.get("eta", DEFAULT_ETA)
    try:
        return UpdateRule(RuleKind(kind), step_)
    except ValueError as exc:
        raise InputError(f"bad update rule spec {spec!r}: {exc}") from None


def rule_to_spec(rule: UpdateRule) -> dict:
    if isinstance(rule.step, float):
        return {"rule": rule.kind.value, "eta": rule.step}
    return {"rule": rule.kind.value, "eta_per_resource": list(rule.step)}
