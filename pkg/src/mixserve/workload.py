"""Synthetic request traces: Poisson arrivals over weighted resolution classes.

A trace row carries everything the engine needs to admit and grade a request:
id, arrival time, resolution class, and an SLO budget expressed in absolute
milliseconds (scaled from the class's standalone latency, so larger images get
proportionally larger budgets).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .csp import STANDARD_CLASSES
from .errors import InputError
from .latency import CostModelParams, DEFAULT_COST, standalone_latency

DEFAULT_WEIGHTS = {"low": 0.4, "med": 0.35, "high": 0.25}


@dataclass(frozen=True)
class WorkloadConfig:
    seed: int = 0
    qps: float = 1.0
    n_requests: int = 100
    class_weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    slo_scale: float = 3.0  # deadline = slo_scale x standalone latency
    steps: int = 50

    def __post_init__(self):
        if self.qps <= 0:
            raise InputError("qps must be positive")
        if self.n_requests < 1:
            raise InputError("n_requests must be >= 1")
        if self.slo_scale <= 0:
            raise InputError("slo_scale must be positive")
        if self.steps < 1:
            raise InputError("steps must be >= 1")
        for cls, w in self.class_weights.items():
            if cls not in STANDARD_CLASSES:
                raise InputError(f"unknown resolution class {cls!r}")
            if w < 0:
                raise InputError("class weights must be nonnegative")
        if sum(self.class_weights.values()) <= 0:
            raise InputError("class weights must not all be zero")


@dataclass(frozen=True)
class TraceRow:
    request_id: str
    arrival_ms: float
    resolution_class: str
    slo_ms: float


def generate_trace(cfg: WorkloadConfig, cost: CostModelParams = DEFAULT_COST) -> list[TraceRow]:
    """Draw a deterministic trace: exponential gaps, classes by weight."""
    rng = np.random.default_rng(cfg.seed)
    gaps = rng.exponential(scale=1000.0 / cfg.qps, size=cfg.n_requests)
    arrivals = np.cumsum(gaps)
    names = sorted(cfg.class_weights)
    w = np.array([cfg.class_weights[n] for n in names], dtype=np.float64)
    picks = rng.choice(len(names), size=cfg.n_requests, p=w / w.sum())
    rows = []
    for i in range(cfg.n_requests):
        cls = names[int(picks[i])]
        rows.append(
            TraceRow(
                request_id=f"req-{i:05d}",
                arrival_ms=float(arrivals[i]),
                resolution_class=cls,
                slo_ms=cfg.slo_scale * standalone_latency(cls, cfg.steps, cost),
            )
        )
    return rows


def write_trace(rows: list[TraceRow], path) -> None:
    with open(path, "w") as f:
        for r in rows:
            f.write(json.dumps({
                "request_id": r.request_id,
                "arrival_ms": r.arrival_ms,
                "resolution_class": r.resolution_class,
                "slo_ms": r.slo_ms,
            }) + "\n")


def read_trace(path) -> list[TraceRow]:
    rows = []
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                rows.append(TraceRow(
                    request_id=d["request_id"],
                    arrival_ms=float(d["arrival_ms"]),
                    resolution_class=d["resolution_class"],
                    slo_ms=float(d["slo_ms"]),
                ))
            except (KeyError, ValueError) as exc:
                raise InputError(f"{path}:{line_no}: bad trace row: {exc}") from exc
    if not rows:
        raise InputError(f"{path}: empty trace")
    arr = [r.arrival_ms for r in rows]
    if any(b < a for a, b in zip(arr, arr[1:])):
        raise InputError(f"{path}: arrivals are not sorted")
    return rows
