#!/usr/bin/env python3
"""Sweep arrival rate x scheduling policy and tabulate SLO attainment.

Each (qps, policy, seed) cell is one simulator run written under --out; the
per-run artifacts stay on disk so `mixserve report` or ad-hoc analysis can
reuse them.  Ends by printing a mean-attainment table over seeds.

Example:
    python3 scripts/sweep_qps.py --out runs/sweep --seeds 0 1 2 3 4
"""

import argparse
import csv
import sys
from collections import defaultdict
from pathlib import Path

from mixserve.cli import main as mixserve_main


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/sweep", help="directory for run subdirectories")
    ap.add_argument("--qps", type=float, nargs="+", default=[0.8, 1.0, 1.1, 1.3])
    ap.add_argument("--policies", nargs="+", default=["fcfs", "slo_aware"],
                    choices=["fcfs", "slo_aware", "sequential"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--n-requests", type=int, default=120)
    ap.add_argument("--slo-scale", type=float, default=3.0)
    return ap.parse_args(argv)


def run_cell(out_root: Path, qps: float, policy: str, seed: int, args) -> None:
    out_dir = out_root / f"qps{qps}-{policy}-seed{seed}"
    rc = mixserve_main([
        "simulate",
        "--out-dir", str(out_dir),
        "--qps", str(qps),
        "--policy", policy,
        "--seed", str(seed),
        "--n-requests", str(args.n_requests),
        "--slo-scale", str(args.slo_scale),
    ])
    if rc != 0:
        raise SystemExit(f"simulate failed for qps={qps} policy={policy} seed={seed}")


def main(argv=None) -> int:
    args = parse_args(argv)
    out_root = Path(args.out)
    for qps in args.qps:
        for policy in args.policies:
            for seed in args.seeds:
                run_cell(out_root, qps, policy, seed, args)
    if mixserve_main(["report", "--runs", str(out_root)]) != 0:
        return 1

    cells = defaultdict(list)
    with open(out_root / "report.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            cells[(float(row["qps"]), row["policy"])].append(float(row["slo_attainment"]))

    print()
    print(f"mean SLO attainment over {len(args.seeds)} seeds")
    header = "qps".rjust(6) + "".join(p.rjust(12) for p in args.policies)
    print(header)
    for qps in sorted(args.qps):
        row = f"{qps:6.2f}"
        for policy in args.policies:
            vals = cells[(qps, policy)]
            row += f"{sum(vals) / len(vals):12.3f}" if vals else " " * 12
        print(row)
    return 0


if __name__ == "__main__":
    sys.exit(main())
