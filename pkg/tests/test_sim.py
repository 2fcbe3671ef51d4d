from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feemkt.config import load_scenario
from feemkt.core import InputError, ResourceModel, Row, Transaction
from feemkt.losses import EqualityTarget
from feemkt.pricing import RuleKind, UpdateRule
from feemkt.producer import BudgetError, PackingProblem, net_utilities, solve_bruteforce
from feemkt.sim import (
    ConfigError,
    Distribution,
    GeneratorSpec,
    MempoolPolicy,
    PendingTx,
    ScenarioConfig,
    SimState,
    build_parallel,
    check_trace,
    generate,
    initial_state,
    metrics,
    moving_average,
    per_contract_mode,
    run_block,
    run_scenario,
    trace_csv,
    uniform_baseline,
    with_seed,
)
from feemkt.pricing import PriceState

from conftest import three_tx, two_resource_model


@pytest.fixture(scope="module")
def scenario1():
    return load_scenario("scenario1")[0]


def _three_tx_config(target=3.0, num_blocks=1):
    model, _ = three_tx(target)
    gen = GeneratorSpec(0, (Distribution.fixed(1.0),), Distribution.fixed(1.0))
    return ScenarioConfig(model, EqualityTarget(np.array([target])), UpdateRule(), num_blocks, (gen,))


def _arrivals(txs, block=1, gen=0):
    return [PendingTx(tx, block, gen) for tx in txs]


# ---------------------------------------------------------------- generation


def test_background_generator_draws(scenario1):
    txs = generate(scenario1, 0, 7)
    assert len(txs) == 15
    for tx in txs:
        a1, a2, joint = tx.resources
        assert 0.5 <= a1 <= 1 and 0.05 <= a2 <= 0.1 and 0 <= tx.utility <= 5
        assert joint == pytest.approx(a1 + 10 * a2)


def test_burst_generator():
    cfg = load_scenario("scenario2")[0]
    burst = generate(cfg, 1, 10)
    assert len(burst) == 150
    assert all(tx.resources.tolist() == pytest.approx([0.01, 0.5, 5.01]) for tx in burst)
    assert all(10 <= tx.utility <= 20 for tx in burst)
    assert generate(cfg, 1, 9) == [] and generate(cfg, 1, 11) == []


def test_zero_count_and_determinism(scenario1):
    assert generate(_three_tx_config(), 0, 1) == []
    assert generate(scenario1, 0, 3) == generate(scenario1, 0, 3)
    assert generate(scenario1, 0, 3) != generate(scenario1, 0, 4)
    assert generate(with_seed(scenario1, 1), 0, 3) != generate(scenario1, 0, 3)


def test_distribution_validation():
    with pytest.raises(ConfigError):
        Distribution.uniform(2, 1)
    with pytest.raises(ConfigError):
        GeneratorSpec(-1, (), Distribution.fixed(0))


# ---------------------------------------------------------------- blocks


def test_run_block_fixed_point_on_three_tx():
    cfg = _three_tx_config()
    _, txs = three_tx()
    state = SimState(PriceState([0.5]))
    new, rec = run_block(state, cfg, 1, _arrivals(txs))
    assert rec.usage.tolist() == [3.0]
    assert rec.num_included == 2
    assert new.prices.prices.tolist() == [0.5]
    assert [e.tx.id for e in new.mempool] == [2]


def test_empty_block_moves_prices_by_target():
    cfg = _three_tx_config()
    new, rec = run_block(SimState(PriceState([0.5])), cfg, 1, [])
    assert rec.usage.tolist() == [0.0] and rec.num_included == 0
    assert new.prices.prices.tolist() == pytest.approx([0.5 - 0.01 * 3.0])


def test_burst_block_capacity():
    cfg = load_scenario("scenario2")[0]
    state = initial_state(cfg, [0.75, 0.08])
    arrivals = [PendingTx(tx, 10, g) for g in range(2) for tx in generate(cfg, g, 10)]
    _, rec = run_block(state, cfg, 10, arrivals)
    assert rec.included_by_generator[1] <= 9
    assert rec.usage[2] <= 50 + 1e-9


def test_budget_error_reports_block():
    cfg = replace(load_scenario("scenario2")[0], node_budget=1, warm_start=None)
    state = initial_state(cfg, [0.75, 0.08])
    arrivals = [PendingTx(tx, 10, g) for g in range(2) for tx in generate(cfg, g, 10)]
    with pytest.raises(BudgetError) as exc:
        run_block(state, cfg, 10, arrivals)
    assert exc.value.block_index == 10


def test_ttl_expiry_and_no_carry_over():
    _, txs = three_tx()
    cfg = replace(_three_tx_config(), mempool=MempoolPolicy(True, 2))
    state = SimState(PriceState([10.0]))  # nothing is worth including
    state, rec = run_block(state, cfg, 1, _arrivals(txs, 1))
    assert rec.mempool_depth_after == 3 and rec.num_expired == 0
    state, rec = run_block(state, cfg, 2, [])
    assert rec.mempool_depth_after == 0 and rec.num_expired == 3
    cfg = replace(_three_tx_config(), mempool=MempoolPolicy(False))
    _, rec = run_block(SimState(PriceState([10.0])), cfg, 1, _arrivals(txs, 1))
    assert rec.num_expired == 3 and rec.mempool_depth_after == 0


def test_single_block_scenario(scenario1):
    trace = run_scenario(replace(scenario1, num_blocks=1))
    assert len(trace.records) == 1 and trace.records[0].block_index == 1


def test_invariants_hold_on_scenario1(scenario1):
    trace = run_scenario(replace(scenario1, num_blocks=60))
    assert check_trace(trace) == []
    for r in trace.records:
        assert r.mempool_depth_before == r.mempool_depth_after + r.num_included + r.num_expired


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**63), st.sampled_from([None, 1, 3]))
def test_mempool_conservation_and_feasibility(seed, ttl):
    cfg = replace(load_scenario("scenario1")[0], num_blocks=12, seed=seed, mempool=MempoolPolicy(True, ttl))
    assert check_trace(run_scenario(cfg)) == []


# ---------------------------------------------------------------- baseline


def test_uniform_baseline_structure(scenario1):
    base = uniform_baseline(scenario1)
    assert base.model.priced_names == ["joint"]
    assert base.model.targets.tolist() == [10.0]
    assert base.model.limits.tolist() == scenario1.model.limits.tolist()
    assert base.loss.dim == 1 and base.rule == scenario1.rule
    tx = Transaction(0, base.model.expand([0.75, 0.075]), 3.0)
    assert tx.resources[2] == pytest.approx(1.5)
    assert net_utilities(PackingProblem(base.model, [tx], [2.0]))[0] == pytest.approx(3.0 - 1.5 * 2.0)


def test_uniform_baseline_needs_composite_row():
    with pytest.raises(ConfigError):
        uniform_baseline(_three_tx_config())


# ---------------------------------------------------------------- metrics


def test_moving_average():
    assert moving_average([1, 1, 1, 5]).tolist() == [1, 1, 1, 2]
    assert moving_average([2, 4]).tolist() == [2, 3]


@settings(max_examples=100, deadline=None)
@given(st.floats(-100, 100), st.integers(1, 30))
def test_moving_average_of_constant(c, n):
    assert np.allclose(moving_average(np.full(n, c)), c)


def test_metrics_of_on_target_usage(scenario1):
    trace = run_scenario(replace(scenario1, num_blocks=3))
    recs = tuple(replace(r, usage=np.array([10.0, 1.0, 20.0])) for r in trace.records)
    m = metrics(replace(trace, records=recs), window=(1, 3))
    assert np.all(m.sq_dev == 0) and m.mean_sq_dev.tolist() == [0, 0]
    assert m.cumulative_included.tolist() == np.cumsum([r.num_included for r in recs]).tolist()


def test_csv_layout(scenario1):
    text = trace_csv(run_scenario(replace(scenario1, num_blocks=2)))
    lines = text.split("\n")
    assert lines[0] == "block,y_r1,y_r2,y_joint,p_r1,p_r2,n_included,mempool_depth,producer_objective"
    assert len(lines) == 4 and lines[-1] == "" and "\r" not in text


# ---------------------------------------------------------------- parallel environments


def test_single_environment_is_the_base_model():
    model = two_resource_model()
    stack = build_parallel(1, model)
    assert stack.model == model
    txs = [Transaction(0, model.expand([0.7, 0.07]), 2.0)]
    assert stack.stack(txs)[0].resources.tolist() == txs[0].resources.tolist()


def test_two_environments_two_txs():
    model = ResourceModel((Row("cpu", 1.0, 1.0, True),))
    txs = [Transaction(0, [1.0], 3.0), Transaction(1, [1.0], 2.0)]
    stack = build_parallel(2, model, num_txs=2)
    stacked = stack.stack(txs)
    sol = solve_bruteforce(PackingProblem(stack.model, stacked, [0.0, 0.0]))
    assert sol.bundle.indices == (0, 3)
    assert stack.assignment(sol.bundle.included, 2) == {0: 0, 1: 1}
    assert sol.objective == 5.0
    # the same transaction in both environments breaks its assignment row
    both = np.zeros(4)
    both[[0, 2]] = 1
    y = np.column_stack([t.resources for t in stacked]) @ both
    assert y[stack.model.index("assign_0")] == 2.0 > stack.model.rows[stack.model.index("assign_0")].limit


def test_shared_rows_apply_to_the_sum():
    model = ResourceModel((Row("cpu", 1.0), Row("disk", 1.5)))
    txs = [Transaction(j, [1.0, 1.0], 1.0 + j) for j in range(3)]
    stack = build_parallel(3, model, shared=["disk"], num_txs=3)
    sol = solve_bruteforce(PackingProblem(stack.model, stack.stack(txs), []))
    assert sol.bundle.size == 1  # disk admits one transaction overall
    with pytest.raises(InputError):
        build_parallel(0, model)
    with pytest.raises(InputError):
        build_parallel(2, model, shared=["gpu"], num_txs=1)


# ---------------------------------------------------------------- per-contract pricing


def test_zero_weights_freeze_prices(scenario1):
    cfg = per_contract_mode(np.zeros(3), replace(scenario1, num_blocks=20))
    trace = run_scenario(cfg)
    assert np.all(trace.prices == 0)
    assert np.all(trace.usage[:, cfg.contract_rows] == 0)


def test_contract_fee_arithmetic(scenario1):
    cfg = per_contract_mode(np.array([1.0, 10.0, 0.0]), scenario1)
    tx = generate(cfg, 0, 1)[0]
    z = tx.resources[cfg.contract_rows[0]]
    assert z == pytest.approx(tx.resources[0] + 10 * tx.resources[1])
    model = cfg.model
    single = Transaction(0, np.array([1.0, 0.1, 2.0, 2.0]), 5.0)
    assert net_utilities(PackingProblem(model, [single], [1.0]))[0] == pytest.approx(3.0)


def test_contract_fixed_point():
    model = ResourceModel((Row("r", 100.0, 3.0, True),))
    gens = tuple(GeneratorSpec(0, (Distribution.fixed(1.0),), Distribution.fixed(1.0)) for _ in range(3))
    cfg = ScenarioConfig(model, EqualityTarget(np.array([3.0])), UpdateRule(RuleKind.PROJECTED_GRADIENT, 0.05), 1, gens)
    targets = np.array([2.0, 3.0, 4.0])
    pc = per_contract_mode(np.array([2.0]), cfg, targets)
    arrivals = []
    for c, t in enumerate(targets):
        col = pc.model.expand([t / 2.0])
        col[[r for k, r in enumerate(pc.contract_rows) if k != c]] = 0.0
        arrivals.append(PendingTx(Transaction(c, col, 10.0), 1, c))
    p0 = np.array([0.3, 0.2, 0.1])
    new, rec = run_block(SimState(PriceState(p0)), pc, 1, arrivals)
    assert rec.usage[list(pc.contract_rows)].tolist() == targets.tolist()
    assert np.array_equal(new.prices.prices, p0)


def test_contract_weights_validation(scenario1):
    with pytest.raises(InputError):
        per_contract_mode(np.array([1.0, -1.0, 0.0]), scenario1)
    with pytest.raises(InputError):
        per_contract_mode(np.array([1.0]), scenario1)
