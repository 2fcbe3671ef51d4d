from __future__ import annotations

import math

import numpy as np
import pytest

from feemkt.core import Bundle, InputError, ResourceModel, Row, Transaction
from feemkt.duality import (
    DualInstance,
    LossMinimizers,
    PreconditionError,
    UnsupportedError,
    cone_contains,
    converse_linesearch,
    dual_subgradient,
    dual_value,
    dual_values,
    extremal_sets,
    instance_from_dict,
    max_price_member,
    max_price_threshold,
    minimal_demand_disjoint,
    minimize_dual,
    packing_value,
    primal_optimum,
    primal_value,
    random_instance,
    run_battery,
    weak_duality_check,
)
from feemkt.losses import EqualityTarget, InequalityTarget, Linear, Quadratic
from feemkt.producer import CapacityError

from conftest import three_tx


def instance(loss_cls=EqualityTarget, target=3.0):
    model, txs = three_tx(target)
    return DualInstance(model, txs, loss_cls(np.array([target])))


def test_dual_value_examples():
    inst = instance()
    assert instance().loss.conjugate([0.5]).value == 1.5
    assert packing_value(inst, [0.5]) == 3.5
    assert dual_value(inst, [0.5]) == 5.0
    assert packing_value(inst, [10.0]) == 0.0
    assert dual_value(inst, [10.0]) == 30.0
    assert dual_value(instance(InequalityTarget), [-1.0]) == math.inf


def test_dual_values_vectorized_agree():
    inst = instance(Quadratic, 2.0)
    P = np.linspace(-2, 4, 31)[:, None]
    assert dual_values(inst, P) == pytest.approx([dual_value(inst, p) for p in P])


def test_capacity_limit():
    model = ResourceModel((Row("r", 5.0, 1.0, True),))
    txs = [Transaction(j, [1.0], 1.0) for j in range(21)]
    with pytest.raises(CapacityError):
        DualInstance(model, txs, EqualityTarget(np.array([1.0])))


def test_primal_value():
    inst = instance()
    assert primal_value(inst, [Bundle.from_indices(3, [0, 1])], [1.0]) == 5.0
    assert primal_value(inst, [Bundle.from_indices(3, [0])], [1.0]) == -math.inf
    q = instance(Quadratic, 2.0)
    mid = primal_value(q, [Bundle.from_indices(3, [0]), Bundle.from_indices(3, [2])], [0.5, 0.5])
    assert mid == pytest.approx(3.0)  # q.x = 3, usage 2 = b*
    with pytest.raises(InputError):
        primal_value(inst, [Bundle.from_indices(3, [0])], [0.7])


def test_weak_duality_and_negative_control():
    inst = instance()
    assert weak_duality_check(inst, [0.5], 1000)
    assert weak_duality_check(inst, [0.0], 1000)
    assert not weak_duality_check(inst, [0.5], 1000, dual=lambda i, p: dual_value(i, p) - 1)


def test_grid_and_descent_on_reference_instance():
    inst = instance()
    grid = minimize_dual(inst, "grid", resolution=3001, bounds=[(0.0, 3.0)])
    desc = minimize_dual(inst, "descent", budget=5000, eta=0.01)
    assert grid.value == pytest.approx(5.0)
    assert desc.value <= grid.value + 1e-3
    assert desc.evaluations <= 5000


def test_disjoint_instance_has_nonzero_price():
    inst = instance(target=2.0)
    grid = minimize_dual(inst, "grid", resolution=2001)
    assert grid.p.tolist() == pytest.approx([1.5])
    assert grid.value == pytest.approx(3.5)
    assert dual_value(inst, [0.0]) == 5.0
    assert primal_optimum(inst) == pytest.approx(3.5)


def test_quadratic_minimizer_residual():
    inst = instance(Quadratic, 2.0)
    res = minimize_dual(inst, "descent", budget=5000, eta=0.01)
    assert res.p.tolist() == pytest.approx([1.0], abs=1e-6)
    assert np.max(np.abs(dual_subgradient(inst, res.p))) <= 1e-3


def test_grid_budget_flag():
    res = minimize_dual(instance(), "grid", budget=10, resolution=100)
    assert res.exhausted and res.evaluations == 10


def test_extremal_sets_and_minimal_demand():
    sets = extremal_sets(instance(target=2.0))
    assert [b.indices for b in sets.X_star] == [(0, 1)]
    assert sets.AX_star.tolist() == [[3.0]]
    assert minimal_demand_disjoint(sets)
    assert not minimal_demand_disjoint(extremal_sets(instance(target=3.0)))
    with pytest.raises(UnsupportedError):
        model, txs = three_tx()
        extremal_sets(DualInstance(model, txs, Linear(np.array([1.0]))))


def test_inequality_minimizers_are_a_box():
    sets = extremal_sets(instance(InequalityTarget, 2.0))
    assert sets.Y_star.kind == "box"
    assert minimal_demand_disjoint(sets)
    assert not minimal_demand_disjoint(extremal_sets(instance(InequalityTarget, 3.0)))


def test_cone_contains_examples():
    sets = extremal_sets(instance(target=2.0))
    assert cone_contains([0.0], sets)
    assert cone_contains([1.0], sets)
    other = type(sets)(sets.X_star, sets.AX_star, LossMinimizers("point", np.array([4.0])))
    assert not cone_contains([1.0], other)


def test_max_price_set():
    inst = instance()
    t = max_price_threshold(inst)
    assert t == pytest.approx(2.0)
    assert max_price_member(inst, [t * 1.001])
    assert not max_price_member(inst, [0.0])
    assert max_price_member(inst, [50.0])


def test_max_price_monotone():
    rng = np.random.default_rng(4)
    inst = random_instance(rng, 6, 2)
    t = max_price_threshold(inst)
    for _ in range(50):
        p = np.full(2, t * 1.01) + rng.uniform(0, 1, 2)
        assert max_price_member(inst, p)
        assert max_price_member(inst, p + rng.uniform(0, 1, 2))


def test_converse_linesearch():
    found = converse_linesearch(instance(target=2.0), [1.0])
    assert found is not None and found[1] < 5.0
    found = converse_linesearch(instance(Quadratic, 2.0), [1.0])
    assert found is not None
    with pytest.raises(PreconditionError):
        converse_linesearch(instance(target=3.0), [1.0])


def test_bundled_instances_through_battery():
    for name, expect in (("disjoint", "minimal_demand_nonzero_price"), ("overlap", "zero_price_optimal")):
        from feemkt.config import load_json
        inst = instance_from_dict(load_json(f"instance_{name}"))
        checks = {c.name: c for c in run_battery(inst, num_samples=200)}
        assert all(c.passed for c in checks.values()), [c for c in checks.values() if not c.passed]
        assert expect in checks


def test_instance_from_dict_rejects_bad_input():
    with pytest.raises(InputError):
        instance_from_dict({"resources": [{"name": "r", "limit": 3, "target": 2}], "transactions": [{"resources": [1]}],
                            "loss": {"kind": "equality"}})
