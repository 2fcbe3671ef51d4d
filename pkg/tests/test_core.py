from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feemkt.core import (
    Bundle,
    InputError,
    ResourceModel,
    Row,
    Transaction,
    composite_model,
    is_feasible,
    model_from_spec,
    model_to_spec,
    priced_usage,
    resource_matrix,
    residual,
    usage,
)

from conftest import three_tx, two_resource_model


def test_usage_of_three_tx_bundle():
    model, txs = three_tx()
    assert usage(model, txs, Bundle.from_indices(3, [0, 1])).tolist() == [3.0]


def test_empty_bundle_uses_nothing():
    model, txs = three_tx()
    assert usage(model, txs, np.zeros(3)).tolist() == [0.0]


def test_bundle_length_mismatch():
    model, txs = three_tx()
    with pytest.raises(InputError):
        usage(model, txs, np.zeros(2))


def test_non_binary_bundle_rejected():
    with pytest.raises(InputError):
        Bundle(np.array([0, 0.5, 1]))


def test_composite_row_is_filled_in():
    model = two_resource_model()
    assert model.expand([0.75, 0.075]).tolist() == pytest.approx([0.75, 0.075, 1.5])
    assert model.expand([0.01, 0.5])[2] == pytest.approx(5.01)


def test_resource_matrix_shape_and_columns():
    model, txs = three_tx()
    A = resource_matrix(model, txs)
    assert A.shape == (1, 3)
    assert A.tolist() == [[1.0, 2.0, 3.0]]


def test_transaction_dimension_mismatch():
    model, _ = three_tx()
    with pytest.raises(InputError):
        resource_matrix(model, [Transaction(0, [1.0, 2.0], 1.0)])


def test_negative_resources_rejected():
    with pytest.raises(InputError):
        Transaction(0, [-1.0], 1.0)


def test_residual_and_priced_usage():
    model = two_resource_model()
    y = model.expand([11.0, 0.5])
    assert priced_usage(model, y).tolist() == [11.0, 0.5]
    assert residual(priced_usage(model, y), model.targets).tolist() == [1.0, -0.5]
    with pytest.raises(InputError):
        residual([1.0], [1.0, 2.0])


def test_feasibility_is_inclusive_at_the_limit():
    model = two_resource_model()
    assert is_feasible(model, [50.0, 0.0, 50.0])
    assert is_feasible(model, [0.0, 5.0, 50.0])
    assert not is_feasible(model, [0.0, 5.0, 50.0 + 1e-6])


def test_model_validation():
    with pytest.raises(InputError):
        Row("r", limit=-1.0)
    with pytest.raises(InputError):
        Row("r", priced=True)
    with pytest.raises(InputError):
        ResourceModel((Row("a"), Row("a")))
    with pytest.raises(InputError):
        ResourceModel((Row("a"), Row("c", combination=(1.0, 2.0))))


def test_spec_round_trip():
    model = two_resource_model()
    again = model_from_spec(model_to_spec(model))
    assert again == model
    assert composite_model(model.rows[:2], [("joint", (1, 10), 50.0)]) == model


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=8), st.data())
def test_usage_is_additive_over_disjoint_bundles(cols, data):
    model = ResourceModel((Row("a", 100.0), Row("b", 100.0)))
    txs = [Transaction(j, c, 0.0) for j, c in enumerate(cols)]
    n = len(txs)
    x1 = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    x2 = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n))) & ~x1
    total = usage(model, txs, x1 | x2)
    assert np.allclose(total, usage(model, txs, x1) + usage(model, txs, x2))
