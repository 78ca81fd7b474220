"""Command line front end: verify, bench, train-predictor, simulate, report.

Settings resolve in precedence order: command line flag, then MIXSERVE_<KEY>
environment variable, then a flat key=value config file, then the built-in
default.  All outputs (trace/event JSONL, per-request CSV, metrics JSON) are
byte-deterministic for a fixed seed and settings.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import InputError
from .engine import Engine, EngineConfig
from .latency import (
    MlpConfig,
    MlpPredictor,
    generate_dataset,
    mean_relative_error,
    step_latency,
)
from .model import ModelConfig
from .scheduler import SchedulerConfig
from .verify import run_all
from .workload import WorkloadConfig, generate_trace, read_trace, write_trace

ENV_PREFIX = "MIXSERVE_"

DEFAULTS = {
    "seed": 0,
    "qps": 1.0,
    "n_requests": 100,
    "slo_scale": 3.0,
    "steps": 50,
    "weight_low": 0.4,
    "weight_med": 0.35,
    "weight_high": 0.25,
    "policy": "slo_aware",
    "plane": "cost_only",
    "workers": 1,
    "max_active": 12,
    "theta_mode": 2.0,
    "arch": "dit_like",
    "n_blocks": 2,
    "use_cache": True,
    "patch_size": 32,
}


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise InputError(f"cannot parse boolean for {key!r}: {raw!r}")
    try:
        return type(default)(raw)
    except ValueError as exc:
        raise InputError(f"cannot parse {key!r}: {raw!r}") from exc


def parse_config_file(path) -> dict:
    """Flat key=value file; # starts a comment; unknown keys are errors."""
    out = {}
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise InputError(f"{path}:{line_no}: unknown setting {key!r}")
            out[key] = _coerce(key, raw.strip())
    return out


def resolve_settings(args) -> dict:
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(parse_config_file(args.config))
    for key in DEFAULTS:
        raw = os.environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            settings[key] = _coerce(key, raw)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def _workload_config(s: dict) -> WorkloadConfig:
    return WorkloadConfig(
        seed=s["seed"], qps=s["qps"], n_requests=s["n_requests"],
        class_weights={
            "low": s["weight_low"], "med": s["weight_med"], "high": s["weight_high"],
        },
        slo_scale=s["slo_scale"], steps=s["steps"],
    )


def _engine_config(s: dict) -> EngineConfig:
    return EngineConfig(
        plane=s["plane"], n_workers=s["workers"], total_steps=s["steps"],
        patch_size=s["patch_size"], use_cache=s["use_cache"],
        scheduler=SchedulerConfig(
            policy=s["policy"], max_active=s["max_active"], theta_mode=s["theta_mode"],
        ),
        model=ModelConfig(arch=s["arch"], n_blocks=s["n_blocks"]),
    )


# ------------------------------------------------------------- output files


def write_events(events: list, path) -> None:
    with open(path, "w") as f:
        for e in events:
            f.write(json.dumps(e) + "\n")


def write_summary_csv(completions: list, path) -> None:
    cols = ["request_id", "resolution_class", "arrival_ms", "finish_ms",
            "latency_ms", "slo_ms", "met_slo", "discarded", "worker"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for c in sorted(completions, key=lambda c: c["request_id"]):
            w.writerow([c[k] for k in cols])


def write_metrics(summary: dict, settings: dict, path) -> None:
    with open(path, "w") as f:
        json.dump({"summary": summary, "settings": settings}, f, indent=2, sort_keys=True)
        f.write("\n")


# -------------------------------------------------------------- subcommands


def cmd_verify(args) -> int:
    results = run_all()
    width = max(len(name) for name, _, _ in results)
    failures = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
        failures += 0 if ok else 1
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 1 if failures else 0


def cmd_bench(args) -> int:
    comps = [
        {"low": 1}, {"med": 1}, {"high": 1},
        {"low": 3}, {"med": 3}, {"high": 3},
        {"low": 1, "med": 1, "high": 1},
        {"low": 4, "med": 4, "high": 4},
    ]
    rows = []
    for comp in comps:
        label = "+".join(f"{v}{k}" for k, v in sorted(comp.items()) if v)
        rows.append((label, sum(comp.values()), step_latency(comp)))
    print(f"{'composition':<16}{'requests':>9}{'step_ms':>12}")
    for label, n, ms in rows:
        print(f"{label:<16}{n:>9}{ms:>12.3f}")
    t0 = time.perf_counter()
    from .csp import split
    from .model import init_weights
    from .patched import run_block

    rng = np.random.default_rng(0)
    cfg = ModelConfig(arch="dit_like", n_blocks=1)
    batch = split([("a", rng.normal(size=(4, 64, 64))), ("b", rng.normal(size=(4, 64, 64)))],
                  patch_size=32)
    run_block(batch, batch.data, init_weights(cfg)[0])
    wall = (time.perf_counter() - t0) * 1000
    print(f"reference patched block over 2 low latents: {wall:.1f} ms wall")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["composition", "requests", "step_ms"])
            w.writerows(rows)
        print(f"wrote {out / 'bench.csv'}")
    return 0


def cmd_train_predictor(args) -> int:
    settings = resolve_settings(args)
    x, y, _ = generate_dataset(args.samples, seed=args.data_seed)
    rng = np.random.default_rng(args.split_seed)
    idx = rng.permutation(len(x))
    n_train = int(0.8 * len(x))
    tr, ev = idx[:n_train], idx[n_train:]
    model = MlpPredictor(MlpConfig(epochs=args.epochs, seed=settings["seed"]))
    loss = model.train(x[tr], y[tr])
    mre = mean_relative_error(model.predict(x[ev]), y[ev])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    print(f"trained on {n_train} compositions, final loss {loss:.3e}")
    print(f"held-out mean relative error: {mre:.4f} ({len(ev)} compositions)")
    print(f"wrote {out}")
    return 0 if mre < 0.05 else 1


def cmd_simulate(args) -> int:
    settings = resolve_settings(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.trace:
        trace = read_trace(args.trace)
    else:
        trace = generate_trace(_workload_config(settings))
        write_trace(trace, out_dir / "trace.jsonl")
    predictor = MlpPredictor.load(args.predictor) if args.predictor else None
    engine = Engine(_engine_config(settings), predictor)
    result = engine.run(trace)
    write_events(result.events, out_dir / "events.jsonl")
    write_summary_csv(result.completions, out_dir / "summary.csv")
    write_metrics(result.summary, settings, out_dir / "metrics.json")
    s = result.summary
    print(
        f"{s['n_requests']} requests: {s['n_completed']} completed, "
        f"{s['n_discarded']} discarded, slo_attainment={s['slo_attainment']:.3f}, "
        f"goodput={s['goodput_rps']:.3f} rps"
    )
    print(f"wrote {out_dir / 'events.jsonl'}, {out_dir / 'summary.csv'}, {out_dir / 'metrics.json'}")
    return 0


def cmd_report(args) -> int:
    paths = sorted(Path(args.runs).glob("*/metrics.json"))
    if not paths:
        raise InputError(f"no metrics.json found under {args.runs!r}")
    rows = []
    for p in paths:
        with open(p) as f:
            blob = json.load(f)
        s, cfg = blob["summary"], blob["settings"]
        rows.append({
            "run": p.parent.name,
            "qps": cfg["qps"],
            "policy": cfg["policy"],
            "plane": cfg["plane"],
            "workers": cfg["workers"],
            "seed": cfg["seed"],
            "slo_attainment": s["slo_attainment"],
            "goodput_rps": s["goodput_rps"],
            "mean_latency_ms": s["mean_latency_ms"],
            "p95_latency_ms": s["p95_latency_ms"],
            "n_requests": s["n_requests"],
            "n_discarded": s["n_discarded"],
        })
    rows.sort(key=lambda r: (r["qps"], r["policy"], r["seed"], r["run"]))
    out = Path(args.out) if args.out else Path(args.runs) / "report.csv"
    with open(out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {out} ({len(rows)} runs)")
    return 0


# -------------------------------------------------------------------- main


def _add_settings_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--qps", type=float)
    p.add_argument("--n-requests", dest="n_requests", type=int)
    p.add_argument("--slo-scale", dest="slo_scale", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--policy", choices=("slo_aware", "fcfs", "sequential"))
    p.add_argument("--plane", choices=("cost_only", "numeric"))
    p.add_argument("--workers", type=int)
    p.add_argument("--max-active", dest="max_active", type=int)
    p.add_argument("--arch", choices=("unet_like", "dit_like"))
    p.add_argument("--n-blocks", dest="n_blocks", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mixserve",
        description="mixed-resolution diffusion serving: simulator, cache, scheduler",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run built-in equivalence checks")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("bench", help="print cost-model step latencies")
    p.add_argument("--out-dir")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("train-predictor", help="fit the MLP latency predictor")
    p.add_argument("--out", required=True, help="where to write the predictor JSON")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--epochs", type=int, default=6000)
    p.add_argument("--data-seed", dest="data_seed", type=int, default=42)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=7)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train_predictor)

    p = sub.add_parser("simulate", help="run a trace through the serving engine")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--trace", help="existing trace JSONL; otherwise one is generated")
    p.add_argument("--predictor", help="MLP predictor JSON for the scheduler")
    _add_settings_flags(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("report", help="aggregate run metrics into one CSV")
    p.add_argument("--runs", required=True, help="directory containing run subdirectories")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
