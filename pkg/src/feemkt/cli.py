"""``feemkt`` command line: simulate, verify, solve.

Exit codes: 0 success, 2 bad input (including missing files and instances
too large for enumeration), 3 solver node budget exhausted.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import git_blob_sha1, load_json, load_scenario
from .core import InputError, Transaction, model_from_spec
from .duality import instance_from_dict, run_battery
from .pricing import UpdateRule
from .producer import DEFAULT_NODE_BUDGET, BudgetError, CapacityError, PackingProblem, solve_bruteforce, solve_exact
from .sim import ScenarioConfig, metrics, run_scenario, trace_csv, trace_summary, uniform_baseline, with_seed

log = logging.getLogger("feemkt")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_BUDGET = 3


@dataclass(frozen=True)
class RunManifest:
    config_path: str
    seed: int
    output_dir: str
    config_sha1: str
    version: str
    overrides: dict

    def write(self, out: Path) -> None:
        (out / "manifest.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def parse_seed_range(text: str) -> range:
    """``"3..7"`` -> seeds 3 to 7 inclusive."""
    try:
        lo, hi = (int(v) for v in text.split(".."))
    except ValueError:
        raise InputError(f"expected a seed range like 0..9, got {text!r}") from None
    if hi < lo:
        raise InputError(f"empty seed range {text!r}")
    return range(lo, hi + 1)


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if args.rule is None and args.eta is None:
        return cfg
    kind = args.rule or cfg.rule.kind
    step = args.eta if args.eta is not None else cfg.rule.step
    rule = UpdateRule(kind, step)
    initial = cfg.initial_prices
    if rule.multiplicative and initial is not None and min(initial) <= 0:
        log.warning("multiplicative rule: ignoring non-positive initial prices %s", initial)
        initial = None
    return replace(cfg, rule=rule, initial_prices=initial)


def simulate_one(cfg: ScenarioConfig, out: Path, baseline: bool, manifest: RunManifest) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    trace = run_scenario(cfg)
    _write_text(out / f"{cfg.name}.csv", trace_csv(trace))
    summary = trace_summary(trace)
    _write_json(out / f"{cfg.name}_summary.json", summary)
    result = {"summary": summary}
    if baseline:
        base_cfg = uniform_baseline(cfg)
        btrace = run_scenario(base_cfg)
        _write_text(out / f"{base_cfg.name}.csv", trace_csv(btrace))
        bsummary = trace_summary(btrace, reference=cfg.model)
        _write_json(out / f"{base_cfg.name}_summary.json", bsummary)
        mm, bm = metrics(trace), metrics(btrace, cfg.model)
        comparison = {
            "deviation_ratio": {n: (float(a / b) if b > 0 else None)
                                for n, a, b in zip(mm.names, mm.mean_sq_dev, bm.mean_sq_dev)},
            "throughput_ratio": float(mm.cumulative_included[-1] / max(1, bm.cumulative_included[-1])),
            "cumulative_included": {"multidimensional": int(mm.cumulative_included[-1]),
                                    "uniform": int(bm.cumulative_included[-1])},
        }
        _write_json(out / "comparison.json", comparison)
        result["comparison"] = comparison
    manifest.write(out)
    return result


def _simulate_seed(args_tuple):
    cfg, out, baseline, manifest = args_tuple
    return simulate_one(cfg, out, baseline, manifest)


def cmd_simulate(args) -> int:
    cfg, raw = load_scenario(args.config)
    cfg = _apply_overrides(cfg, args)
    out = Path(args.out)
    overrides = {k: getattr(args, k) for k in ("rule", "eta") if getattr(args, k) is not None}
    sha = git_blob_sha1(raw)
    if args.seeds:
        seeds = parse_seed_range(args.seeds)
        jobs = []
        for s in seeds:
            run_dir = out / f"seed_{s}"
            man = RunManifest(str(args.config), s, str(run_dir), sha, __version__, overrides)
            jobs.append((with_seed(cfg, s), run_dir, args.baseline, man))
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_simulate_seed, jobs))
        for s, r in zip(seeds, results):
            print(json.dumps({"seed": s, "mean_sq_dev": r["summary"]["mean_sq_dev"],
                              "cumulative_included": r["summary"]["cumulative_included"]}, sort_keys=True))
        return EXIT_OK
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    man = RunManifest(str(args.config), cfg.seed, str(out), sha, __version__, overrides)
    res = simulate_one(cfg, out, args.baseline, man)
    print(json.dumps(res, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    data = load_json(args.instance)
    try:
        inst = instance_from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{args.instance}: {exc}") from None
    checks = run_battery(inst, resolution=args.resolution, num_samples=args.samples, seed=args.seed)
    ok = all(c.passed for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
        if c.witness and (args.witness or not c.passed):
            print(f"     witness: {json.dumps(c.witness, sort_keys=True)}")
    return EXIT_OK if ok else 1


def problem_from_dict(data: dict) -> PackingProblem:
    try:
        model = model_from_spec(data["resources"])
        txs = []
        for j, t in enumerate(data["transactions"]):
            res = t["resources"]
            if len(res) == len(model.base_indices) and len(res) != model.num_resources:
                res = model.expand(res)
            txs.append(Transaction(t.get("id", j), res, float(t["utility"])))
        prices = data.get("prices", [0.0] * len(model.priced_indices))
        return PackingProblem(model, tuple(txs), prices)
    except KeyError as exc:
        raise InputError(f"problem is missing field {exc}") from None
    except TypeError as exc:
        raise InputError(str(exc)) from None


def _solution_json(sol) -> dict:
    return {"included": list(sol.bundle.indices), "objective": sol.objective,
            "certificate": sol.certificate, "nodes": sol.node_count}


def cmd_solve(args) -> int:
    problem = problem_from_dict(load_json(args.problem))
    if args.bruteforce:
        sol = solve_bruteforce(problem)
    else:
        try:
            sol = solve_exact(problem, args.node_budget)
        except BudgetError as exc:
            print(json.dumps({"error": str(exc), "incumbent": _solution_json(exc.incumbent)}, sort_keys=True))
            return EXIT_BUDGET
    print(json.dumps(_solution_json(sol), sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="feemkt", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario and write CSV/JSON outputs")
    sim.add_argument("config", help="scenario JSON path or bundled name (e.g. scenario1)")
    sim.add_argument("--seed", type=int, help="override the config seed")
    sim.add_argument("--seeds", help="seed range a..b, one run directory per seed")
    sim.add_argument("--workers", type=int, default=None, help="processes for --seeds")
    sim.add_argument("--out", default="out", help="output directory (default: out)")
    sim.add_argument("--baseline", action="store_true", help="also run the single-price baseline")
    sim.add_argument("--rule", choices=["projected_gradient", "exponential", "log_exponential"])
    sim.add_argument("--eta", type=float, help="step size override")
    sim.set_defaults(func=cmd_simulate)

    ver = sub.add_parser("verify", help="run the duality checks on a small instance")
    ver.add_argument("instance", help="instance JSON path or bundled name")
    ver.add_argument("--resolution", type=int, default=None, help="grid points per axis")
    ver.add_argument("--samples", type=int, default=1000, help="primal samples per weak-duality probe")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--witness", action="store_true", help="print witnesses for passing checks too")
    ver.set_defaults(func=cmd_verify)

    sol = sub.add_parser("solve", help="solve one packing problem and print the bundle as JSON")
    sol.add_argument("problem", help="problem JSON path or bundled name")
    sol.add_argument("--bruteforce", action="store_true", help="exhaustive search (n <= 20)")
    sol.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET)
    sol.set_defaults(func=cmd_solve)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FEEMKT_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BudgetError as exc:
        where = f" at block {exc.block_index}" if exc.block_index is not None else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return EXIT_BUDGET
    except (InputError, CapacityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
