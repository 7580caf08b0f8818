"""Command-line entry point: generate-data, train, solve, benchmark, report.

Run layout under ``--out``::

    manifest.json           run record (commands, seeds, artefacts)
    data/                   snapshot CSVs + dataset manifest
    models/                 icnn_*.json, mlp_*.json, *_plan.json
    results/                per-method CSV/JSON, benchmark tables, series
    report.md

Exit codes: 0 success, 1 solver failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import benchmark
from .doe import METHODS, DoeRequest, Weights, make_request, results_from_json, results_to_csv, results_to_json, solve_doe, stress_day
from .errors import DoeError, SolverFailure
from .grid import load_feeder
from .icnn import TrainConfig
from .milp import BnbConfig
from .snapshots import SamplingSpec, generate, load, save
from .surrogates import SurrogateSet, full_plan, retrench, train_surrogates

DEFAULTS = {
    "feeder": None,
    "seed": 0,
    "n_samples": 30000,
    "epochs": 400,
    "batch_size": 256,
    "lr": 1e-3,
    "patience": 20,
    "plan": "retrenched",
    "families": ["icnn", "mlp"],
    "hidden": {},
    "methods": ["B0", "B1", "B2", "B3", "B4"],
    "directions": ["upper", "lower"],
    "intervals": None,
    "n_intervals": 96,
    "weights": {},
    "pwl_segments": 8,
    "b4_time_limit": 2.0,
    "time_limit": 60.0,
    "request": None,
}


class UsageError(Exception):
    pass


def parse_intervals(text, n):
    """'0:96', '5', or '1,4,9' into a list of indices."""
    if text is None:
        return list(range(n))
    if isinstance(text, list):
        return [int(t) for t in text]
    text = str(text)
    try:
        if ":" in text:
            a, b = text.split(":")
            return list(range(int(a or 0), int(b) if b else n))
        return [int(t) for t in text.split(",") if t]
    except ValueError as exc:
        raise UsageError(f"bad interval range {text!r}") from exc


def parse_weights(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"weights look like w_v=1000, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError as exc:
            raise UsageError(f"weight {k!r} is not a number") from exc
    return out


def resolve_config(args):
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            cfg.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
    for key in ("feeder", "seed", "n_samples", "epochs", "plan", "pwl_segments", "b4_time_limit", "request"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "method", None):
        methods = [m for item in args.method for m in item.split(",") if m]
        cfg["methods"] = methods
    if getattr(args, "direction", None):
        cfg["directions"] = [args.direction]
    if getattr(args, "intervals", None) is not None:
        cfg["intervals"] = args.intervals
    if getattr(args, "family", None):
        cfg["families"] = [args.family]
    cfg["weights"] = {**cfg.get("weights", {}), **parse_weights(getattr(args, "weights", None))}
    bad = [m for m in cfg["methods"] if m not in METHODS]
    if bad or not cfg["methods"]:
        raise UsageError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
    try:
        Weights().with_overrides(cfg["weights"])
    except (KeyError, DoeError) as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def _record(out: Path, command, cfg, artefacts):
    path = out / "manifest.json"
    record = json.loads(path.read_text()) if path.exists() else {"runs": []}
    record["runs"].append({"command": command, "config": {k: cfg[k] for k in sorted(cfg)},
                           "artefacts": artefacts, "time": time.strftime("%Y-%m-%dT%H:%M:%S")})
    path.write_text(json.dumps(record, indent=1, default=str))


def cmd_generate(cfg, out: Path, log):
    feeder = load_feeder(cfg["feeder"])
    data = generate(feeder, SamplingSpec.default(feeder, cfg["seed"]), int(cfg["n_samples"]))
    save(data, out / "data")
    log(f"wrote {len(data)} snapshots ({data.rejections} rejected draws) to {out / 'data'}")
    _record(out, "generate-data", cfg, ["data/manifest.json"])


def cmd_train(cfg, out: Path, log):
    feeder = load_feeder(cfg["feeder"])
    data = load(out / "data", feeder)
    plan = retrench(feeder) if cfg["plan"] == "retrenched" else full_plan(feeder)
    tc = TrainConfig(epochs=int(cfg["epochs"]), batch_size=int(cfg["batch_size"]), lr=float(cfg["lr"]),
                     patience=int(cfg["patience"]), seed=int(cfg["seed"]))
    report = {}
    for family in cfg["families"]:
        start = time.perf_counter()
        bundle = train_surrogates(data, plan, family, cfg["hidden"], tc, seed=int(cfg["seed"]), log=log)
        bundle.save(out / "models", family)
        report[family] = bundle.nmae
        log(f"{family}: trained in {time.perf_counter() - start:.1f} s")
    (out / "models" / "nmae.json").write_text(json.dumps(report, indent=1))
    _record(out, "train", cfg, ["models/"])


def _request(cfg, feeder, direction):
    if cfg.get("request"):
        req = DoeRequest.from_dict(json.loads(Path(cfg["request"]).read_text()))
        req.direction = direction
    else:
        req = make_request(feeder, stress_day(feeder, int(cfg["n_intervals"]), int(cfg["seed"])), direction)
    req.weights = Weights().with_overrides(cfg["weights"])
    if cfg["intervals"] is not None or not cfg.get("request"):
        req.intervals = parse_intervals(cfg["intervals"], req.n_intervals)
    if any(not 0 <= t < req.n_intervals for t in req.intervals):
        raise UsageError(f"intervals must lie in [0, {req.n_intervals})")
    return req


def _bundles(cfg, out, methods):
    icnn = mlp = None
    models = out / "models"
    try:
        if {"B1", "B2"} & set(methods):
            icnn = SurrogateSet.load(models, "icnn")
        if "B4" in methods:
            mlp = SurrogateSet.load(models, "mlp")
    except OSError as exc:
        raise UsageError(f"trained models missing under {models}: run 'train' first ({exc})") from exc
    return icnn, mlp


def run_methods(cfg, out: Path, log):
    feeder = load_feeder(cfg["feeder"])
    icnn, mlp = _bundles(cfg, out, cfg["methods"])
    results, failures = [], {}
    (out / "results").mkdir(parents=True, exist_ok=True)
    for direction in cfg["directions"]:
        req = _request(cfg, feeder, direction)
        for method in cfg["methods"]:
            limit = cfg["b4_time_limit"] if method == "B4" else cfg["time_limit"]
            try:
                rows = solve_doe(feeder, req, method, icnn, mlp, int(cfg["pwl_segments"]), BnbConfig(time_limit=limit))
            except SolverFailure as exc:
                failures[f"{method}/{direction}"] = str(exc)
                log(f"{method} {direction}: FAILED {exc}")
                continue
            stem = out / "results" / f"{method}_{direction}"
            stem.with_suffix(".csv").write_text(results_to_csv(rows))
            stem.with_suffix(".json").write_text(results_to_json(rows))
            results.extend(rows)
            mean_t = sum(r.wall_time for r in rows) / len(rows)
            log(f"{method} {direction}: {len(rows)} intervals, J = {sum(r.j for r in rows):.2f}, mean time {mean_t:.3f} s")
    return results, failures


def cmd_solve(cfg, out, log):
    _, failures = run_methods(cfg, out, log)
    _record(out, "solve", cfg, ["results/"])
    return 1 if failures else 0


def cmd_benchmark(cfg, out, log):
    results, failures = run_methods(cfg, out, log)
    res = out / "results"
    (res / "benchmark.csv").write_text(benchmark.aggregate_csv(results))
    (res / "series.csv").write_text(benchmark.series_csv(results))
    (res / "benchmark_status.json").write_text(json.dumps({"failures": failures,
                                                           "tightness": benchmark.tightness(results)}, indent=1))
    _record(out, "benchmark", cfg, ["results/benchmark.csv", "results/series.csv"])
    return 1 if failures else 0


def cmd_report(cfg, out, log):
    res = out / "results"
    files = sorted(res.glob("B*_*.json")) if res.exists() else []
    if not files:
        raise UsageError(f"no result files under {res}")
    results = [r for f in files for r in results_from_json(f.read_text())]
    nmae_path = out / "models" / "nmae.json"
    nmae = json.loads(nmae_path.read_text()) if nmae_path.exists() else None
    (out / "report.md").write_text(benchmark.render_report(results, nmae))
    log(f"wrote {out / 'report.md'} from {len(files)} result files")
    return 0


COMMANDS = {"generate-data": cmd_generate, "train": cmd_train, "solve": cmd_solve,
            "benchmark": cmd_benchmark, "report": cmd_report}


def build_parser():
    parser = argparse.ArgumentParser(prog="icnn-doe", description="DOE optimisation with convex neural surrogates")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--feeder", help="feeder JSON (default: bundled 33-bus feeder)")
        p.add_argument("--config", help="JSON file with any of the option names")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="run", help="run directory")
        p.add_argument("--quiet", action="store_true")
        if name == "generate-data":
            p.add_argument("--n", dest="n_samples", type=int)
        if name == "train":
            p.add_argument("--epochs", type=int)
            p.add_argument("--plan", choices=["retrenched", "full"])
            p.add_argument("--family", choices=["icnn", "mlp"])
        if name in ("solve", "benchmark"):
            p.add_argument("--method", action="append", help="B0..B4; repeatable or comma separated")
            p.add_argument("--direction", choices=["upper", "lower"])
            p.add_argument("--intervals", help="e.g. 0:96, 12, or 3,7,9")
            p.add_argument("--weights", action="append", help="override, e.g. w_v=1e6 (repeatable)")
            p.add_argument("--request", help="DoeRequest JSON instead of the built-in stress day")
            p.add_argument("--pwl-segments", dest="pwl_segments", type=int)
            p.add_argument("--b4-time-limit", dest="b4_time_limit", type=float)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    log = (lambda msg: None) if args.quiet else (lambda msg: print(msg, flush=True))
    out = Path(args.out)
    try:
        cfg = resolve_config(args)
        out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](cfg, out, log)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    except DoeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
