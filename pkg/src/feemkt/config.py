"""JSON scenario and instance files.

A scenario file looks like::

    {
      "name": "scenario1", "seed": 42, "num_blocks": 250,
      "resources": [{"name": "r1", "limit": 50, "target": 10, "priced": true}, ...],
      "loss": {"kind": "equality"},
      "rule": {"rule": "projected_gradient", "eta": 0.01},
      "mempool": {"carry_over": true, "ttl_blocks": null},
      "generators": [{"count": 15, "start_block": 1,
                      "resources": [{"uniform": [0.5, 1.0]}, {"uniform": [0.05, 0.1]}],
                      "utility": {"uniform": [0, 5]}}],
      "baseline": {"fraction": 0.2},
      "warm_start": "scenario1.json"
    }

Generators take either ``start_block``/``end_block`` or a one-shot
``block``.  Resource distributions are given per base row, or as a single
``{"fixed": [..]}`` vector.  A string ``warm_start`` is resolved relative to
the file, then among the bundled configs.
"""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

from .core import InputError, model_from_spec
from .losses import loss_from_spec
from .pricing import rule_from_spec
from .producer import DEFAULT_NODE_BUDGET
from .sim import (
    BaselineSpec,
    ConfigError,
    DEFAULT_BURN_IN,
    Distribution,
    GeneratorSpec,
    MempoolPolicy,
    ScenarioConfig,
)

BUNDLED = "configs"


def git_blob_sha1(data: bytes) -> str:
    """Content hash as ``git hash-object`` computes it."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def bundled_names() -> list[str]:
    root = resources.files(__package__) / BUNDLED
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def resolve_path(name: str | Path, base_dir: Path | None = None) -> tuple[bytes, Path | None]:
    """Read a config from disk, falling back to the bundled copy of the same name."""
    p = Path(name)
    candidates = [p] if p.is_absolute() or base_dir is None else [base_dir / p, p]
    for c in candidates:
        if c.is_file():
            return c.read_bytes(), c.resolve()
    fname = p.name if p.suffix == ".json" else p.name + ".json"
    ref = resources.files(__package__) / BUNDLED / fname
    if ref.is_file():
        return ref.read_bytes(), None
    raise ConfigError(f"no such file or bundled config: {name}")


def parse_json(data: bytes, source: str = "<config>") -> dict:
    try:
        obj = json.loads(data.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{source}: not UTF-8 ({exc})") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{source}: top level must be an object")
    return obj


def _dist(spec, where: str) -> Distribution:
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError('expected {"uniform": [lo, hi]} or {"fixed": value}', where)
    (kind, arg), = spec.items()
    try:
        if kind == "uniform":
            lo, hi = arg
            return Distribution.uniform(lo, hi)
        if kind == "fixed":
            return Distribution.fixed(arg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), where) from None
    raise ConfigError(f"unknown distribution {kind!r}", where)


def _generator(spec: dict, nbase: int, where: str) -> GeneratorSpec:
    if not isinstance(spec, dict):
        raise ConfigError("expected an object", where)
    if "block" in spec:
        start = end = int(spec["block"])
    else:
        start = int(spec.get("start_block", 1))
        end = spec.get("end_block")
        end = None if end is None else int(end)
    res = spec.get("resources")
    if isinstance(res, dict) and set(res) == {"fixed"} and isinstance(res["fixed"], list):
        dists = [Distribution.fixed(v) for v in res["fixed"]]
    elif isinstance(res, list):
        dists = [_dist(d, f"{where}.resources[{i}]") for i, d in enumerate(res)]
    else:
        raise ConfigError("expected a list of distributions or a fixed vector", f"{where}.resources")
    if len(dists) != nbase:
        raise ConfigError(f"{len(dists)} distributions for {nbase} base rows", f"{where}.resources")
    if "utility" not in spec:
        raise ConfigError("missing", f"{where}.utility")
    try:
        return GeneratorSpec(int(spec.get("count", 0)), tuple(dists), _dist(spec["utility"], f"{where}.utility"),
                             start, end, str(spec.get("name", "")))
    except ConfigError as exc:
        if exc.field:
            raise
        raise ConfigError(str(exc), where) from None


def scenario_from_dict(data: dict, base_dir: Path | None = None, source: str = "<config>") -> ScenarioConfig:
    def need(key):
        if key not in data:
            raise ConfigError("missing", key)
        return data[key]

    try:
        model = model_from_spec(need("resources"))
    except (InputError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "resources") from None
    try:
        loss = loss_from_spec(data.get("loss", {"kind": "equality"}), model.targets.tolist())
    except (InputError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "loss") from None
    try:
        rule = rule_from_spec(data.get("rule", {}))
    except InputError as exc:
        raise ConfigError(str(exc), "rule") from None
    gens = need("generators")
    if not isinstance(gens, list):
        raise ConfigError("expected a list", "generators")
    generators = [_generator(g, len(model.base_indices), f"generators[{i}]") for i, g in enumerate(gens)]
    mp = data.get("mempool") or {}
    try:
        mempool = MempoolPolicy(bool(mp.get("carry_over", True)), mp.get("ttl_blocks"))
    except ConfigError as exc:
        raise ConfigError(str(exc), "mempool") from None
    baseline = None
    if data.get("baseline") is not None:
        b = data["baseline"]
        baseline = BaselineSpec(b.get("row"), b.get("target"), float(b.get("fraction", 0.2)))
    warm = None
    if data.get("warm_start") is not None:
        ws = data["warm_start"]
        if isinstance(ws, str):
            raw, path = resolve_path(ws, base_dir)
            warm = scenario_from_dict(parse_json(raw, ws), path.parent if path else None, ws)
        elif isinstance(ws, dict):
            warm = scenario_from_dict(ws, base_dir, f"{source}:warm_start")
        else:
            raise ConfigError("expected a file name or an inline scenario", "warm_start")
    burn_in = tuple(int(v) for v in data.get("burn_in", DEFAULT_BURN_IN))
    if len(burn_in) != 2 or burn_in[0] > burn_in[1]:
        raise ConfigError(f"expected [first, last], got {list(burn_in)}", "burn_in")
    try:
        return ScenarioConfig(
            model=model,
            loss=loss,
            rule=rule,
            num_blocks=int(need("num_blocks")),
            generators=tuple(generators),
            seed=int(data.get("seed", 0)),
            mempool=mempool,
            initial_prices=data.get("initial_prices"),
            baseline=baseline,
            burn_in=burn_in,
            warm_start=warm,
            node_budget=int(data.get("node_budget", DEFAULT_NODE_BUDGET)),
            name=str(data.get("name", Path(source).stem)),
        )
    except ConfigError:
        raise
    except (InputError, TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_scenario(name: str | Path) -> tuple[ScenarioConfig, bytes]:
    """Load a scenario by path or bundled name; also returns the raw bytes for hashing."""
    raw, path = resolve_path(name)
    cfg = scenario_from_dict(parse_json(raw, str(name)), path.parent if path else None, str(name))
    return cfg, raw


def load_json(name: str | Path) -> dict:
    raw, _ = resolve_path(name)
    return parse_json(raw, str(name))
