"""Admission scheduling for mixed-resolution denoising batches.

The SLO-aware policy normalizes urgency as slack: the time a request could
still sit in queue, measured in units of its standalone latency.  Each tick it
repeatedly considers the least-slack waiting request, discards it if it can no
longer finish by its deadline, switches to a throughput-optimal pick when even
the most urgent candidate is comfortable, and admits only while the tightest
active request would still meet its deadline at the slower mixed-batch pace.

FCFS and sequential policies exist as baselines; neither ever discards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .csp import STANDARD_CLASSES
from .errors import InputError
from .latency import CostModelParams, DEFAULT_COST, standalone_latency

POLICIES = ("slo_aware", "fcfs", "sequential")


@dataclass
class RequestMeta:
    request_id: str
    cls: str
    arrival_ms: float
    slo_ms: float
    total_steps: int
    remaining_steps: int = -1

    def __post_init__(self):
        if self.cls not in STANDARD_CLASSES:
            raise InputError(f"unknown resolution class {self.cls!r}")
        if self.total_steps < 1:
            raise InputError("total_steps must be >= 1")
        if self.remaining_steps < 0:
            self.remaining_steps = self.total_steps

    @property
    def deadline_ms(self) -> float:
        return self.arrival_ms + self.slo_ms

    @property
    def pixels(self) -> int:
        return STANDARD_CLASSES[self.cls].pixel ** 2


@dataclass(frozen=True)
class SchedulerConfig:
    policy: str = "slo_aware"
    max_active: int = 12
    theta_mode: float = 2.0  # slack above which admission turns throughput-greedy
    cost: CostModelParams = field(default_factory=CostModelParams)

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise InputError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.max_active < 1:
            raise InputError("max_active must be >= 1")


@dataclass
class TickResult:
    admitted: list
    discarded: list


def composition(requests) -> dict:
    comp: dict = {}
    for r in requests:
        comp[r.cls] = comp.get(r.cls, 0) + 1
    return comp


def slack(req: RequestMeta, now_ms: float, predicted_remaining_ms: float,
          cost: CostModelParams = DEFAULT_COST) -> float:
    """(deadline - now - predicted remaining work) in units of standalone latency.

    1.0 means the request could wait one extra standalone run and still finish
    in time; 0.0 means it must run at the predicted pace starting now.
    """
    sa = standalone_latency(req.cls, req.total_steps, cost)
    return (req.deadline_ms - now_ms - predicted_remaining_ms) / sa


def time_out(req: RequestMeta, now_ms: float, predicted_remaining_ms: float) -> bool:
    """True when the request cannot finish by its deadline even if run now."""
    return now_ms + predicted_remaining_ms > req.deadline_ms


class Scheduler:
    """Pure admission policy: owns no queues, just decides on each tick."""

    def __init__(self, cfg: SchedulerConfig | None = None, predictor=None):
        self.cfg = cfg or SchedulerConfig()
        if predictor is None:
            from .latency import AnalyticPredictor

            predictor = AnalyticPredictor(self.cfg.cost)
        self.predictor = predictor

    # --------------------------------------------------------------- ticks

    def tick(self, now_ms: float, active: list, waiting: list) -> TickResult:
        """Decide which waiting requests join the batch at time `now_ms`.

        `active` and `waiting` are not mutated; the result lists admitted and
        discarded RequestMeta in decision order.
        """
        if self.cfg.policy == "slo_aware":
            return self._tick_slo(now_ms, list(active), list(waiting))
        return self._tick_fifo(list(active), list(waiting))

    def _capacity(self) -> int:
        return 1 if self.cfg.policy == "sequential" else self.cfg.max_active

    def _tick_fifo(self, active: list, waiting: list) -> TickResult:
        admitted = []
        pool = sorted(waiting, key=lambda r: (r.arrival_ms, r.request_id))
        while pool and len(active) + len(admitted) < self._capacity():
            admitted.append(pool.pop(0))
        return TickResult(admitted=admitted, discarded=[])

    def _predicted_remaining(self, req: RequestMeta, batch: list) -> float:
        step = self.predictor.predict_step_latency(composition(batch))
        return step * req.remaining_steps

    def _tick_slo(self, now_ms: float, active: list, waiting: list) -> TickResult:
        admitted: list = []
        discarded: list = []
        pool = list(waiting)
        while pool and len(active) < self.cfg.max_active:
            # most urgent candidate, judged at the pace it would actually run
            scored = []
            for w in pool:
                p = self._predicted_remaining(w, active + [w])
                scored.append((slack(w, now_ms, p, self.cfg.cost), w.arrival_ms, w.request_id, w, p))
            scored.sort(key=lambda s: (s[0], s[1], s[2]))
            s_cur, _, _, cur, p_cur = scored[0]

            if time_out(cur, now_ms, p_cur):
                discarded.append(cur)
                pool.remove(cur)
                continue

            if s_cur > self.cfg.theta_mode:
                # nobody is in danger: pick for pixel throughput instead
                base_pixels = sum(r.pixels for r in active)
                best = None
                for w in pool:
                    step = self.predictor.predict_step_latency(composition(active + [w]))
                    rate = (base_pixels + w.pixels) / step
                    key = (-rate, w.arrival_ms, w.request_id)
                    if best is None or key < best[0]:
                        best = (key, w)
                cur = best[1]

            if active:
                # would admitting cur starve the tightest active request?
                step_new = self.predictor.predict_step_latency(composition(active + [cur]))
                act = min(
                    active,
                    key=lambda a: (
                        slack(a, now_ms, step_new * a.remaining_steps, self.cfg.cost),
                        a.arrival_ms,
                        a.request_id,
                    ),
                )
                if time_out(act, now_ms, step_new * act.remaining_steps):
                    break

            active.append(cur)
            pool.remove(cur)
            admitted.append(cur)
        return TickResult(admitted=admitted, discarded=discarded)
