"""Block-by-block fee market simulation.

Each block: new transactions join the mempool, producers pack the welfare
maximizing bundle at the current prices, the network steps prices with the
observed usage, included transactions leave the mempool and, when a TTL is
set, stale ones expire.

Randomness is split per ``(seed, block, generator)``: every generator draws
from its own ``PCG64`` stream seeded by ``SeedSequence([seed, block, gen])``,
so adding a generator never perturbs the others' draws.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (
    InputError,
    ResourceModel,
    Row,
    Transaction,
    is_feasible,
    priced_usage,
)
from .losses import EqualityTarget, InequalityTarget, Loss, Quadratic, loss_to_spec
from .pricing import PriceState, UpdateRule, grad_estimate, step
from .producer import DEFAULT_NODE_BUDGET, BudgetError, PackingProblem, solve_exact

log = logging.getLogger(__name__)

BASELINE_FRACTION = 0.2
DEFAULT_BURN_IN = (50, 250)
MA_WINDOW = 4


class ConfigError(InputError):
    """Invalid scenario configuration; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Distribution:
    """``uniform`` on ``[lo, hi]`` or a ``fixed`` value."""

    kind: str
    lo: float
    hi: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "fixed"):
            raise ConfigError(f"unknown distribution {self.kind!r}")
        if self.kind == "fixed":
            object.__setattr__(self, "hi", self.lo)
        if not self.lo <= self.hi:
            raise ConfigError(f"need lo <= hi, got [{self.lo}, {self.hi}]")

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "Distribution":
        return cls("uniform", float(lo), float(hi))

    @classmethod
    def fixed(cls, value: float) -> "Distribution":
        return cls("fixed", float(value))

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "fixed":
            return np.full(size, self.lo)
        return rng.uniform(self.lo, self.hi, size=size)


@dataclass(frozen=True)
class GeneratorSpec:
    """Submits ``count`` transactions at every block in ``[start_block, end_block]``."""

    count: int
    resources: tuple[Distribution, ...]
    utility: Distribution
    start_block: int = 1
    end_block: int | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "resources", tuple(self.resources))
        if self.count < 0:
            raise ConfigError(f"count must be >= 0, got {self.count}")
        if self.end_block is not None and self.end_block < self.start_block:
            raise ConfigError(f"end_block {self.end_block} precedes start_block {self.start_block}")

    def active(self, block_index: int) -> bool:
        return self.start_block <= block_index and (self.end_block is None or block_index <= self.end_block)


@dataclass(frozen=True)
class MempoolPolicy:
    carry_over: bool = True
    ttl_blocks: int | None = None

    def __post_init__(self):
        if self.ttl_blocks is not None and self.ttl_blocks < 1:
            raise ConfigError(f"ttl_blocks must be >= 1, got {self.ttl_blocks}")


@dataclass(frozen=True)
class BaselineSpec:
    """Price one composite row only; its target defaults to a fraction of the largest base limit."""

    row: str | None = None
    target: float | None = None
    fraction: float = BASELINE_FRACTION


@dataclass(frozen=True)
class ScenarioConfig:
    model: ResourceModel
    loss: Loss
    rule: UpdateRule
    num_blocks: int
    generators: tuple[GeneratorSpec, ...]
    seed: int = 0
    mempool: MempoolPolicy = field(default_factory=MempoolPolicy)
    initial_prices: tuple[float, ...] | None = None
    baseline: BaselineSpec | None = None
    burn_in: tuple[int, int] = DEFAULT_BURN_IN
    warm_start: "ScenarioConfig | None" = None
    # per-contract mode: contract row i prices only generator i's transactions
    contract_rows: tuple[int, ...] = ()
    node_budget: int = DEFAULT_NODE_BUDGET
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        if self.num_blocks < 1:
            raise ConfigError(f"must be >= 1, got {self.num_blocks}", "num_blocks")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"must fit in 64 bits, got {self.seed}", "seed")
        m = len(self.model.priced_indices)
        if self.loss.dim != m:
            raise ConfigError(f"loss has dimension {self.loss.dim}, model prices {m} rows", "loss")
        nbase = len(self.model.base_indices)
        for g, gen in enumerate(self.generators):
            if len(gen.resources) != nbase:
                raise ConfigError(f"{len(gen.resources)} resource distributions for {nbase} base rows",
                                  f"generators[{g}].resources")
        if self.initial_prices is not None:
            object.__setattr__(self, "initial_prices", tuple(float(v) for v in self.initial_prices))
            if len(self.initial_prices) != m:
                raise ConfigError(f"{len(self.initial_prices)} entries for {m} priced rows", "initial_prices")
        if self.contract_rows and len(self.contract_rows) != len(self.generators):
            raise ConfigError("one contract row per generator required", "contract_rows")

    def start_prices(self) -> np.ndarray:
        if self.initial_prices is not None:
            return np.array(self.initial_prices)
        return self.rule.default_start(self.loss.dim)


def with_seed(config: ScenarioConfig, seed: int) -> ScenarioConfig:
    """Reseed a config and, recursively, its warm-start run."""
    warm = None if config.warm_start is None else with_seed(config.warm_start, seed)
    return replace(config, seed=int(seed), warm_start=warm)


# --------------------------------------------------------------------------
# transaction generation


def block_rng(seed: int, block_index: int, generator_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, block_index, generator_id])))


def generate(config: ScenarioConfig, generator_id: int, block_index: int,
             rng: np.random.Generator | None = None) -> list[Transaction]:
    """Draw one generator's submissions for a block.

    Draw order: each base resource's ``count`` values in row order, then the
    ``count`` utilities.
    """
    gen = config.generators[generator_id]
    if not gen.active(block_index) or gen.count == 0:
        return []
    if rng is None:
        rng = block_rng(config.seed, block_index, generator_id)
    base = np.column_stack([d.draw(rng, gen.count) for d in gen.resources])
    utils = gen.utility.draw(rng, gen.count)
    model = config.model
    other_contracts = [r for c, r in enumerate(config.contract_rows) if c != generator_id]
    txs = []
    for k in range(gen.count):
        col = model.expand(base[k])
        col[other_contracts] = 0.0
        txs.append(Transaction((block_index, generator_id, k), col, utils[k]))
    return txs


# --------------------------------------------------------------------------
# the block loop


@dataclass(frozen=True)
class PendingTx:
    tx: Transaction
    arrival: int
    generator: int


@dataclass(frozen=True)
class SimState:
    prices: PriceState
    mempool: tuple[PendingTx, ...] = ()


@dataclass(frozen=True)
class BlockRecord:
    block_index: int
    usage: np.ndarray
    prices_before: np.ndarray
    prices_after: np.ndarray
    y_star: np.ndarray
    num_included: int
    num_generated: int
    num_expired: int
    mempool_depth_before: int
    mempool_depth_after: int
    producer_objective: float
    solver_certificate: str
    included_by_generator: tuple[int, ...] = ()
    pending_by_generator: tuple[int, ...] = ()


@dataclass(frozen=True)
class SimTrace:
    config: ScenarioConfig
    records: tuple[BlockRecord, ...]
    final_state: SimState

    @property
    def usage(self) -> np.ndarray:
        return np.array([r.usage for r in self.records])

    @property
    def prices(self) -> np.ndarray:
        """Prices after each block."""
        return np.array([r.prices_after for r in self.records])


def initial_state(config: ScenarioConfig, prices=None) -> SimState:
    p = config.start_prices() if prices is None else np.asarray(prices, dtype=float)
    return SimState(PriceState(p, 0), ())


def run_block(state: SimState, config: ScenarioConfig, block_index: int,
              arrivals: Sequence[PendingTx] | None = None) -> tuple[SimState, BlockRecord]:
    """Advance one block.  ``arrivals`` overrides the configured generators."""
    if arrivals is None:
        arrivals = [PendingTx(tx, block_index, g)
                    for g in range(len(config.generators))
                    for tx in generate(config, g, block_index)]
    pool = list(state.mempool) + list(arrivals)
    txs = tuple(e.tx for e in pool)
    p = state.prices.prices
    model = config.model

    problem = PackingProblem(model, txs, p)
    try:
        sol = solve_exact(problem, config.node_budget)
    except BudgetError as exc:
        exc.block_index = block_index
        raise
    included = sol.bundle.included
    y = problem.A @ included.astype(float)
    observed = priced_usage(model, y)
    y_star = config.loss.maximizer(p)
    if y_star is None:
        # a linear loss has no unique maximizer; its price is pinned, so no step
        y_star = observed
    new_prices = step(config.rule, config.loss, state.prices, grad_estimate(y_star, observed))

    ngen = len(config.generators)
    inc_by_gen = [0] * ngen
    remaining = []
    for e, inc in zip(pool, included):
        if inc:
            inc_by_gen[e.generator] += 1
        else:
            remaining.append(e)
    expired = 0
    policy = config.mempool
    if not policy.carry_over:
        expired, remaining = len(remaining), []
    elif policy.ttl_blocks is not None:
        kept = [e for e in remaining if block_index - e.arrival + 1 < policy.ttl_blocks]
        expired, remaining = len(remaining) - len(kept), kept
    pending = [0] * ngen
    for e in remaining:
        pending[e.generator] += 1

    y.setflags(write=False)
    record = BlockRecord(
        block_index=block_index,
        usage=y,
        prices_before=np.array(p),
        prices_after=np.array(new_prices.prices),
        y_star=np.asarray(y_star, dtype=float),
        num_included=sol.bundle.size,
        num_generated=len(arrivals),
        num_expired=expired,
        mempool_depth_before=len(pool),
        mempool_depth_after=len(remaining),
        producer_objective=sol.objective,
        solver_certificate=sol.certificate,
        included_by_generator=tuple(inc_by_gen),
        pending_by_generator=tuple(pending),
    )
    return SimState(new_prices, tuple(remaining)), record


def run_scenario(config: ScenarioConfig) -> SimTrace:
    """Run ``num_blocks`` blocks (numbered from 1), after the warm-start run if any."""
    start = None
    if config.warm_start is not None:
        warm = run_scenario(config.warm_start)
        start = warm.final_state.prices.prices
        log.info("warm start from %s: prices %s", config.warm_start.name, start.tolist())
    state = initial_state(config, start)
    records = []
    for k in range(1, config.num_blocks + 1):
        state, rec = run_block(state, config, k)
        records.append(rec)
        log.debug("block %d: included %d, usage %s, prices %s", k, rec.num_included,
                  rec.usage.tolist(), rec.prices_after.tolist())
    return SimTrace(config, tuple(records), state)


# --------------------------------------------------------------------------
# uniform (single-price) baseline


def _with_target(loss: Loss, target) -> Loss:
    target = np.asarray(target, dtype=float)
    for cls in (EqualityTarget, InequalityTarget, Quadratic):
        if isinstance(loss, cls):
            return cls(target)
    raise ConfigError(f"cannot retarget a {loss.kind} loss", "loss")


def uniform_baseline(config: ScenarioConfig) -> ScenarioConfig:
    """Price only the composite row; every limit stays in force."""
    spec = config.baseline or BaselineSpec()
    model = config.model
    comps = model.composite_indices
    if spec.row is not None:
        try:
            ci = model.index(spec.row)
        except KeyError:
            raise ConfigError(f"no row named {spec.row!r}", "baseline.row") from None
        if ci not in comps:
            raise ConfigError(f"row {spec.row!r} is not a composite row", "baseline.row")
    elif len(comps) == 1:
        ci = comps[0]
    else:
        raise ConfigError(f"model has {len(comps)} composite rows; name one", "baseline.row")
    if spec.target is not None:
        target = float(spec.target)
    else:
        base_limits = [model.rows[i].limit for i in model.base_indices if model.rows[i].limit is not None]
        if not base_limits:
            raise ConfigError("no base limits to derive a target from", "baseline.target")
        target = spec.fraction * max(base_limits)
    rows = []
    for i, r in enumerate(model.rows):
        if i == ci:
            rows.append(Row(r.name, r.limit, target, True, r.combination))
        else:
            rows.append(Row(r.name, r.limit, None, False, r.combination))
    if not isinstance(config.rule.step, float):
        raise ConfigError("the baseline reuses a scalar step size", "rule")
    warm = None if config.warm_start is None else uniform_baseline(config.warm_start)
    return replace(
        config,
        model=ResourceModel(tuple(rows)),
        loss=_with_target(config.loss, [target]),
        initial_prices=None,
        baseline=None,
        warm_start=warm,
        name=f"{config.name}_uniform",
    )


# --------------------------------------------------------------------------
# metrics


def moving_average(series, window: int = MA_WINDOW) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` entries average the available prefix."""
    x = np.asarray(series, dtype=float)
    c = np.cumsum(x, axis=0)
    out = np.empty_like(c)
    k = np.arange(1, x.shape[0] + 1)
    lagged = np.zeros_like(c)
    lagged[window:] = c[:-window]
    width = np.minimum(k, window).reshape((-1,) + (1,) * (x.ndim - 1))
    out[:] = (c - lagged) / width
    return out


@dataclass(frozen=True)
class Metrics:
    names: tuple[str, ...]
    targets: np.ndarray
    usage: np.ndarray
    sq_dev: np.ndarray
    sq_dev_ma: np.ndarray
    cumulative_included: np.ndarray
    window: tuple[int, int]
    mean_sq_dev: np.ndarray
    mean_usage: np.ndarray

    def summary(self) -> dict:
        return {
            "window": list(self.window),
            "mean_sq_dev": dict(zip(self.names, self.mean_sq_dev.tolist())),
            "mean_usage": dict(zip(self.names, self.mean_usage.tolist())),
            "cumulative_included": int(self.cumulative_included[-1]),
        }


def metrics(trace: SimTrace, reference: ResourceModel | None = None,
            window: tuple[int, int] | None = None) -> Metrics:
    """Deviation statistics on the priced base rows of ``reference``.

    Passing the multidimensional model as ``reference`` scores a baseline
    trace against the same per-resource targets.  ``window`` is an inclusive
    range of block numbers.
    """
    if not trace.records:
        raise InputError("empty trace")
    reference = reference or trace.config.model
    rows = [i for i in reference.priced_indices if reference.rows[i].combination is None]
    names = tuple(reference.rows[i].name for i in rows)
    cols = [trace.config.model.index(n) for n in names]
    targets = np.array([reference.rows[i].target for i in rows])
    Y = trace.usage[:, cols]
    sq = (Y - targets) ** 2
    lo, hi = window or trace.config.burn_in
    blocks = np.array([r.block_index for r in trace.records])
    sel = (blocks >= lo) & (blocks <= hi)
    if not sel.any():
        raise InputError(f"window {lo}..{hi} contains no blocks")
    cum = np.cumsum([r.num_included for r in trace.records])
    return Metrics(names, targets, Y, sq, moving_average(sq), cum, (lo, hi),
                   sq[sel].mean(axis=0), Y[sel].mean(axis=0))


# --------------------------------------------------------------------------
# output


def _fmt(v: float) -> str:
    return repr(float(v))


def trace_csv(trace: SimTrace) -> str:
    model = trace.config.model
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["block"] + [f"y_{n}" for n in model.names] + [f"p_{n}" for n in model.priced_names]
               + ["n_included", "mempool_depth", "producer_objective"])
    for r in trace.records:
        w.writerow([r.block_index] + [_fmt(v) for v in r.usage] + [_fmt(v) for v in r.prices_after]
                   + [r.num_included, r.mempool_depth_after, _fmt(r.producer_objective)])
    return buf.getvalue()


def trace_summary(trace: SimTrace, reference: ResourceModel | None = None) -> dict:
    m = metrics(trace, reference)
    out = {"scenario": trace.config.name, "seed": trace.config.seed, "num_blocks": len(trace.records)}
    out.update(m.summary())
    out["final_prices"] = dict(zip(trace.config.model.priced_names, trace.final_state.prices.prices.tolist()))
    out["loss"] = loss_to_spec(trace.config.loss)
    return out


def check_trace(trace: SimTrace) -> list[str]:
    """Per-block invariant violations (block feasibility and mempool conservation)."""
    problems = []
    prev_depth = 0
    for r in trace.records:
        if not is_feasible(trace.config.model, r.usage):
            problems.append(f"block {r.block_index}: usage {r.usage.tolist()} exceeds a limit")
        expect = prev_depth + r.num_generated - r.num_included - r.num_expired
        if r.mempool_depth_after != expect:
            problems.append(f"block {r.block_index}: mempool depth {r.mempool_depth_after}, expected {expect}")
        prev_depth = r.mempool_depth_after
    return problems


# --------------------------------------------------------------------------
# extensions: parallel execution environments and per-contract pricing


@dataclass(frozen=True)
class ParallelStack:
    """A packing instance over ``L`` copies of every transaction.

    Stacked variable ``k * n + j`` runs transaction ``j`` in environment ``k``.
    """

    model: ResourceModel
    num_envs: int
    per_env_rows: tuple[int, ...]
    shared_rows: tuple[int, ...]
    assign_once: bool

    def stack(self, txs: Sequence[Transaction]) -> tuple[Transaction, ...]:
        n, L = len(txs), self.num_envs
        per, shared = list(self.per_env_rows), list(self.shared_rows)
        out = []
        for k in range(L):
            for j, tx in enumerate(txs):
                col = np.zeros(self.model.num_resources)
                off = k * len(per)
                col[off:off + len(per)] = tx.resources[per]
                off = L * len(per)
                col[off:off + len(shared)] = tx.resources[shared]
                if self.assign_once:
                    col[off + len(shared) + j] = 1.0
                out.append(Transaction((k, tx.id), col, tx.utility))
        return tuple(out)

    def assignment(self, included, n: int) -> dict[int, int]:
        """Transaction index -> environment for a stacked bundle."""
        inc = np.asarray(included, dtype=bool).reshape(self.num_envs, n)
        return {int(j): int(k) for k, j in zip(*np.nonzero(inc))}


def build_parallel(num_envs: int, model: ResourceModel, shared: Sequence[str] = (),
                   num_txs: int | None = None, assign_once: bool = True) -> ParallelStack:
    """Stack ``num_envs`` environments over ``model``.

    Rows named in ``shared`` apply once to the summed usage; the others are
    copied per environment.  With ``assign_once`` (and more than one
    environment) ``num_txs`` assignment rows keep each transaction in at most
    one environment.
    """
    if num_envs < 1:
        raise InputError(f"need at least one environment, got {num_envs}")
    names = model.names
    unknown = [s for s in shared if s not in names]
    if unknown:
        raise InputError(f"unknown shared rows {unknown}")
    per_idx = tuple(i for i, n in enumerate(names) if n not in shared)
    sh_idx = tuple(model.index(n) for n in shared)
    assign = assign_once and num_envs > 1
    if assign and num_txs is None:
        raise InputError("num_txs is required for the assignment rows")

    def plain(r: Row, name: str) -> Row:
        return Row(name, r.limit, r.target, r.priced)

    rows = []
    for k in range(num_envs):
        for i in per_idx:
            r = model.rows[i]
            rows.append(plain(r, r.name if num_envs == 1 else f"{r.name}@{k}"))
    rows += [plain(model.rows[i], model.rows[i].name) for i in sh_idx]
    if assign:
        rows += [Row(f"assign_{j}", 1.0) for j in range(num_txs)]
    if num_envs == 1 and not sh_idx:
        stacked = model
    else:
        stacked = ResourceModel(tuple(rows))
    return ParallelStack(stacked, num_envs, per_idx, sh_idx, assign)


def per_contract_mode(weights, config: ScenarioConfig, targets=None) -> ScenarioConfig:
    """Price each generator (contract) separately on ``z_j = w . a_j``.

    The original rows stay as limits but lose their prices.  Contract targets
    default to ``w . b*`` split evenly across contracts.
    """
    w = np.asarray(weights, dtype=float)
    model = config.model
    if w.shape != (model.num_resources,):
        raise InputError(f"weights need {model.num_resources} entries, got shape {w.shape}")
    if np.any(w < 0):
        raise InputError("contract weights must be >= 0")
    C = len(config.generators)
    if C == 0:
        raise InputError("per-contract mode needs at least one generator")
    full_targets = np.array([0.0 if r.target is None else r.target for r in model.rows])
    if targets is None:
        targets = np.full(C, float(w @ full_targets) / C)
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (C,):
        raise InputError(f"need {C} contract targets, got shape {targets.shape}")
    # fold composite rows into weights over the base rows
    bidx = model.base_indices
    w_base = w[bidx].copy()
    for i in model.composite_indices:
        w_base += w[i] * np.asarray(model.rows[i].combination)
    rows = [Row(r.name, r.limit, None, False, r.combination) for r in model.rows]
    start = len(rows)
    rows += [Row(f"contract_{c}", None, float(targets[c]), True, tuple(w_base)) for c in range(C)]
    loss = _with_target(config.loss, targets)
    return replace(
        config,
        model=ResourceModel(tuple(rows)),
        loss=loss,
        initial_prices=None,
        baseline=None,
        warm_start=None,
        contract_rows=tuple(range(start, start + C)),
        name=f"{config.name}_per_contract",
    )
