from __future__ import annotations

import numpy as np
import pytest

from feemkt.core import ResourceModel, Row, Transaction

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def three_tx(target: float = 3.0):
    """One resource with limit 3; transactions (a, q) = (1, 2), (2, 3), (3, 4)."""
    model = ResourceModel((Row("r", 3.0, target, True),))
    txs = tuple(Transaction(j, [a], q) for j, (a, q) in enumerate([(1, 2), (2, 3), (3, 4)]))
    return model, txs


@pytest.fixture
def three_tx_model():
    return three_tx()


def two_resource_model():
    """Two priced base rows plus the joint row y1 + 10 y2 <= 50."""
    return ResourceModel((
        Row("r1", 50.0, 10.0, True),
        Row("r2", 5.0, 1.0, True),
        Row("joint", 50.0, None, False, (1.0, 10.0)),
    ))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
