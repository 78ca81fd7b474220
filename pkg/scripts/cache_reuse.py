#!/usr/bin/env python3
"""Measure patch reuse on the numeric plane as the MSE threshold varies.

Runs the same small workload through the full numeric engine at several cache
thresholds and prints how many block executions were skipped.  The simulated
clock is identical across rows by construction (the cost model does not see
the cache), so the interesting columns are the reuse counters.
"""

import argparse
import sys

from mixserve.cache import PredictorConfig
from mixserve.engine import Engine, EngineConfig
from mixserve.workload import WorkloadConfig, generate_trace


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--thresholds", type=float, nargs="+", default=[0.01, 0.1, 0.5])
    ap.add_argument("--max-streak", type=int, default=3)
    ap.add_argument("--n-requests", type=int, default=5)
    ap.add_argument("--steps", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    wl = WorkloadConfig(
        seed=args.seed, qps=2.0, n_requests=args.n_requests,
        class_weights={"low": 0.7, "med": 0.3, "high": 0.0}, steps=args.steps,
    )
    trace = generate_trace(wl)

    print("threshold   skipped  computed  reuse_rate  makespan_ms")
    for sigma in args.thresholds:
        cfg = EngineConfig(
            plane="numeric", total_steps=args.steps,
            cache=PredictorConfig(mse_threshold=sigma, max_streak=args.max_streak),
        )
        summary = Engine(cfg).run(trace).summary
        skipped = summary["skipped_patches"]
        computed = summary["computed_patches"]
        rate = skipped / (skipped + computed)
        print(f"{sigma:9.3f}  {skipped:8d}  {computed:8d}  {rate:10.3f}  {summary['makespan_ms']:11.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
