from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feemkt.core import InputError
from feemkt.losses import EqualityTarget, InequalityTarget, Quadratic
from feemkt.pricing import (
    PriceState,
    RuleKind,
    StateError,
    UpdateRule,
    grad_estimate,
    is_fixed_point,
    rule_from_spec,
    rule_to_spec,
    step,
)

B = np.array([10.0, 1.0])


def test_grad_estimate_examples():
    assert grad_estimate([10, 1], [12, 0.5]).tolist() == [-2, 0.5]
    assert grad_estimate([10, 1], [10, 1]).tolist() == [0, 0]
    assert grad_estimate(B, [0, 0]).tolist() == [10, 1]
    with pytest.raises(InputError):
        grad_estimate([1, 2], [1])


def test_projected_gradient_inequality_example():
    new = step(UpdateRule(RuleKind.PROJECTED_GRADIENT, 0.01), InequalityTarget(B),
               PriceState([1, 1]), [-2, 0.5])
    assert new.prices.tolist() == pytest.approx([1.02, 0.995])
    assert new.block_index == 1


def test_projected_gradient_equality_allows_subsidy():
    new = step(UpdateRule(), EqualityTarget(B), PriceState([0.005, 1]), [1, 0])
    assert new.prices.tolist() == pytest.approx([-0.005, 1])


def test_log_exponential_example():
    # usage (12, 0.5) against b* = (10, 1); independent arithmetic
    new = step(UpdateRule(RuleKind.LOG_EXPONENTIAL, 0.01), EqualityTarget(B), PriceState([1, 1]),
               grad_estimate(B, [12, 0.5]))
    assert new.prices.tolist() == pytest.approx([np.exp(0.02), np.exp(-0.005)], rel=1e-15)
    assert new.prices.tolist() == pytest.approx([1.02020, 0.99501], abs=1e-5)


def test_exponential_example():
    new = step(UpdateRule(RuleKind.EXPONENTIAL, 0.01), EqualityTarget(B), PriceState([2, 1]),
               grad_estimate(B, [12, 0.5]))
    assert new.prices.tolist() == pytest.approx([2 * np.exp(0.02), np.exp(-0.005)], rel=1e-15)


def test_multiplicative_rules_reject_nonpositive_prices():
    for kind in (RuleKind.EXPONENTIAL, RuleKind.LOG_EXPONENTIAL):
        with pytest.raises(StateError):
            step(UpdateRule(kind, 0.01), EqualityTarget(B), PriceState([0, 1]), [1, 1])


def test_per_resource_rates():
    rule = UpdateRule(RuleKind.PROJECTED_GRADIENT, (0.01, 0.05))
    new = step(rule, EqualityTarget(B), PriceState([0, 0]), [-1, -1])
    assert new.prices.tolist() == pytest.approx([0.01, 0.05])
    with pytest.raises(InputError):
        rule.rates(3)


def test_rule_validation_and_specs():
    with pytest.raises(InputError):
        UpdateRule(RuleKind.EXPONENTIAL, 0.0)
    with pytest.raises(InputError):
        UpdateRule(RuleKind.EXPONENTIAL, (0.1, -0.1))
    with pytest.raises(InputError):
        rule_from_spec({"rule": "bogus"})
    for spec in ({"rule": "exponential", "eta": 0.02}, {"rule": "projected_gradient", "eta_per_resource": [0.01, 0.05]}):
        assert rule_to_spec(rule_from_spec(spec)) == spec
    assert UpdateRule(RuleKind.LOG_EXPONENTIAL).default_start(2).tolist() == [1e-3, 1e-3]
    assert UpdateRule().default_start(2).tolist() == [0, 0]


def test_is_fixed_point():
    assert is_fixed_point([0.0, 0.0])
    assert is_fixed_point([1e-12, 0.0], 1e-9)
    assert not is_fixed_point([0.5, 0.0], 1e-9)
    with pytest.raises(InputError):
        is_fixed_point([0.0], 0.0)


def test_inequality_rule_reproduces_basic_update_bit_for_bit():
    """p' = (p + eta (A x - b*))_+ on 1000 random states."""
    rng = np.random.default_rng(2024)
    loss = InequalityTarget(B)
    for _ in range(1000):
        eta = float(rng.uniform(1e-4, 1.0))
        p = rng.uniform(0, 5, 2)
        Ax = rng.uniform(0, 20, 2) * np.array([1.0, 0.1])
        ystar = loss.maximizer(p)
        got = step(UpdateRule(RuleKind.PROJECTED_GRADIENT, eta), loss, PriceState(p), grad_estimate(ystar, Ax))
        expect = np.maximum(0.0, p + eta * (Ax - B))
        assert np.array_equal(got.prices, expect)


def test_fixed_point_and_sign_on_random_states():
    rng = np.random.default_rng(77)
    losses = [EqualityTarget(B), InequalityTarget(B), Quadratic(B)]
    for _ in range(1000):
        loss = losses[int(rng.integers(3))]
        p = rng.uniform(0.01, 3, 2)
        ystar = loss.maximizer(p)
        for kind in RuleKind:
            rule = UpdateRule(kind, float(rng.uniform(1e-3, 0.5)))
            # observing y* leaves prices unchanged, exactly
            same = step(rule, loss, PriceState(p), grad_estimate(ystar, ystar))
            assert np.array_equal(same.prices, p)
            obs = ystar + rng.normal(0, 1, 2)
            new = step(rule, loss, PriceState(p), grad_estimate(ystar, obs)).prices
            up, down = obs > ystar, obs < ystar
            assert np.all(new[up] >= p[up]) and np.all(new[down] <= p[down])
            assert loss.in_domain(new)
            if rule.multiplicative:
                assert np.all(new > 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2),
       st.lists(st.floats(-50, 50), min_size=2, max_size=2),
       st.floats(1e-4, 1.0))
def test_projected_gradient_stays_in_domain(p, grad, eta):
    for loss in (InequalityTarget(B), EqualityTarget(B)):
        p0 = loss.project(np.array(p))
        new = step(UpdateRule(RuleKind.PROJECTED_GRADIENT, eta), loss, PriceState(p0), grad)
        assert loss.in_domain(new.prices)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.floats(1e-4, 1.0))
def test_equality_rule_is_unprojected_gradient_step(p, eta):
    p = np.array(p)
    Ax = np.array([12.0, 0.5])
    new = step(UpdateRule(RuleKind.PROJECTED_GRADIENT, eta), EqualityTarget(B), PriceState(p), grad_estimate(B, Ax))
    assert np.array_equal(new.prices, p - eta * (B - Ax))
