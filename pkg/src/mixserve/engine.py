"""Discrete-event serving engine for mixed-resolution denoising.

Workers pull admitted requests into a shared batch and advance it one denoise
step at a time; the clock always comes from the analytic cost model, so the
cost_only plane and the numeric plane produce identical schedules.  The
numeric plane additionally carries real latents through the patched model with
the patch cache in the loop: cache hits show up in telemetry (skipped patches,
hit counts), not in simulated time.

Events are totally ordered by (time, insertion sequence), which makes every
run with the same inputs byte-for-byte reproducible.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .cache import BlockCache, PredictorConfig
from .csp import STANDARD_CLASSES, reassemble, split
from .errors import InputError
from .latency import CostModelParams, DEFAULT_COST, step_latency
from .model import ModelConfig, blend, init_weights, make_prompt, rate_schedule
from .patched import masked_block_forward, run_block
from .scheduler import RequestMeta, Scheduler, SchedulerConfig, composition
from .workload import TraceRow

PLANES = ("cost_only", "numeric")


@dataclass(frozen=True)
class EngineConfig:
    plane: str = "cost_only"
    n_workers: int = 1
    total_steps: int = 50
    patch_size: int = 32
    use_cache: bool = True
    latent_seed: int = 0
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    cost: CostModelParams = field(default_factory=CostModelParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    cache: PredictorConfig = field(default_factory=PredictorConfig)

    def __post_init__(self):
        if self.plane not in PLANES:
            raise InputError(f"plane must be one of {PLANES}, got {self.plane!r}")
        if self.n_workers < 1:
            raise InputError("n_workers must be >= 1")
        if self.total_steps < 1:
            raise InputError("total_steps must be >= 1")


@dataclass
class _Worker:
    worker_id: int
    active: list = field(default_factory=list)
    waiting: list = field(default_factory=list)
    busy: bool = False
    steps_run: int = 0
    latents: dict = field(default_factory=dict)
    prompts: dict = field(default_factory=dict)
    cache: BlockCache | None = None


@dataclass
class RunResult:
    events: list  # dicts: {"t_ms", "kind", "request_id", "worker"}
    completions: list  # one dict per trace row, completion or discard
    summary: dict
    latents: dict = field(default_factory=dict)  # final latents (numeric plane)


class Engine:
    def __init__(self, cfg: EngineConfig | None = None, predictor=None):
        self.cfg = cfg or EngineConfig()
        self.scheduler = Scheduler(self.cfg.scheduler, predictor)
        self.weights = init_weights(self.cfg.model) if self.cfg.plane == "numeric" else None

    # ------------------------------------------------------------- running

    def run(self, trace: list[TraceRow]) -> RunResult:
        if not trace:
            raise InputError("empty trace")
        cfg = self.cfg
        workers = [_Worker(i) for i in range(cfg.n_workers)]
        if cfg.plane == "numeric":
            for w in workers:
                w.cache = BlockCache(cfg.model.n_blocks, cfg.cache)

        events: list = []
        completions: list = []
        skipped_patches = 0
        computed_patches = 0
        final_latents: dict = {}

        heap: list = []
        seq = 0

        def push(t, kind, payload):
            nonlocal seq
            heapq.heappush(heap, (t, seq, kind, payload))
            seq += 1

        def record(t, kind, rid, worker_id):
            events.append({"t_ms": round(t, 9), "kind": kind,
                           "request_id": rid, "worker": worker_id})

        metas: dict = {}
        for i, row in enumerate(trace):
            meta = RequestMeta(
                request_id=row.request_id, cls=row.resolution_class,
                arrival_ms=row.arrival_ms, slo_ms=row.slo_ms,
                total_steps=cfg.total_steps,
            )
            metas[row.request_id] = (meta, i)
            push(row.arrival_ms, "arrival", row.request_id)

        def outstanding(w: _Worker) -> float:
            return sum(
                r.remaining_steps * step_latency({r.cls: 1}, cfg.cost)
                for r in w.active + w.waiting
            )

        def numeric_step(w: _Worker, now: float):
            nonlocal skipped_patches, computed_patches
            reqs = [(r.request_id, w.latents[r.request_id]) for r in w.active]
            batch = split(reqs, patch_size=cfg.patch_size)
            keys = [batch.patch_key(p) for p in range(batch.n_patches)]
            bias = np.stack([w.prompts[e.request_id] for e in batch.requests])
            h = batch.data + bias[batch.request_index][:, :, None, None]
            snap = w.cache.snapshot() if cfg.use_cache else None
            try:
                for b, ops in enumerate(self.weights):
                    if cfg.use_cache:
                        mask = w.cache.predict_reuse(b, keys, h)
                        shape = h.shape[1:]
                        cached_in, cached_out = w.cache.gather(b, keys, mask, shape)
                        y = masked_block_forward(batch, h, mask, ops, cached_in, cached_out)
                        w.cache.batched_fill(b, keys, mask)
                        w.cache.batched_update(b, keys, mask, h, y)
                        skipped_patches += int(mask.sum())
                        computed_patches += int((~mask).sum())
                    else:
                        y = run_block(batch, h, ops)
                        computed_patches += batch.n_patches
                    h = y
            except Exception:
                if snap is not None:
                    w.cache.restore(snap)
                raise
            rate = np.empty(batch.n_requests)
            for slot, e in enumerate(batch.requests):
                meta = metas[e.request_id][0]
                idx = meta.total_steps - meta.remaining_steps
                rate[slot] = rate_schedule(idx, meta.total_steps)
            new_data = blend(batch.data, h, rate[batch.request_index][:, None, None, None])
            for rid, lat in reassemble(batch, new_data).items():
                w.latents[rid] = lat

        def start_step(w: _Worker, now: float):
            comp = composition(w.active)
            dt = step_latency(comp, cfg.cost)
            w.busy = True
            w.steps_run += 1
            if cfg.plane == "numeric":
                numeric_step(w, now)
            push(now + dt, "step_end", w.worker_id)

        def tick(w: _Worker, now: float):
            res = self.scheduler.tick(now, w.active, w.waiting)
            for r in res.discarded:
                w.waiting.remove(r)
                record(now, "discard", r.request_id, w.worker_id)
                completions.append(_completion(r, now, w.worker_id, discarded=True))
            for r in res.admitted:
                w.waiting.remove(r)
                w.active.append(r)
                record(now, "admit", r.request_id, w.worker_id)
            if w.active and not w.busy:
                start_step(w, now)

        def _completion(meta: RequestMeta, t: float, worker_id: int, discarded: bool) -> dict:
            latency = t - meta.arrival_ms
            return {
                "request_id": meta.request_id,
                "resolution_class": meta.cls,
                "arrival_ms": round(meta.arrival_ms, 9),
                "finish_ms": round(t, 9),
                "latency_ms": round(latency, 9),
                "slo_ms": round(meta.slo_ms, 9),
                "met_slo": bool(not discarded and t <= meta.deadline_ms),
                "discarded": bool(discarded),
                "worker": worker_id,
            }

        def end_step(w: _Worker, now: float):
            w.busy = False
            done = []
            for r in w.active:
                r.remaining_steps -= 1
                if r.remaining_steps == 0:
                    done.append(r)
            for r in done:
                w.active.remove(r)
                record(now, "complete", r.request_id, w.worker_id)
                completions.append(_completion(r, now, w.worker_id, discarded=False))
                if cfg.plane == "numeric":
                    final_latents[r.request_id] = w.latents.pop(r.request_id)
                    w.prompts.pop(r.request_id, None)
            if done and cfg.plane == "numeric" and cfg.use_cache:
                live = []
                for r in w.active:
                    side = STANDARD_CLASSES[r.cls].latent // cfg.patch_size
                    live.extend((r.request_id, k) for k in range(side * side))
                w.cache.evict_expired(live)

        # drain every event sharing a timestamp before any scheduling so that
        # simultaneous arrivals batch together instead of racing the first tick
        while heap:
            t = heap[0][0]
            touched = []
            while heap and heap[0][0] == t:
                _, _, kind, payload = heapq.heappop(heap)
                if kind == "arrival":
                    meta, idx = metas[payload]
                    w = min(workers, key=lambda wk: (outstanding(wk), wk.worker_id))
                    w.waiting.append(meta)
                    record(t, "arrival", meta.request_id, w.worker_id)
                    if cfg.plane == "numeric":
                        d = STANDARD_CLASSES[meta.cls].latent
                        rng = np.random.default_rng([cfg.latent_seed, idx])
                        w.latents[meta.request_id] = rng.normal(size=(cfg.model.channels, d, d))
                        w.prompts[meta.request_id] = make_prompt(cfg.model, meta.request_id)
                elif kind == "step_end":
                    w = workers[payload]
                    end_step(w, t)
                else:
                    raise InputError(f"unknown event kind {kind!r}")
                if w not in touched:
                    touched.append(w)
            for w in sorted(touched, key=lambda wk: wk.worker_id):
                if not w.busy:
                    tick(w, t)

        summary = self._summarize(trace, completions, workers,
                                  skipped_patches, computed_patches)
        return RunResult(events=events, completions=completions,
                         summary=summary, latents=final_latents)

    def _summarize(self, trace, completions, workers, skipped, computed) -> dict:
        met = [c for c in completions if c["met_slo"]]
        finished = [c for c in completions if not c["discarded"]]
        discarded = [c for c in completions if c["discarded"]]
        lat = sorted(c["latency_ms"] for c in finished)
        horizon_ms = max(
            [c["finish_ms"] for c in completions] + [r.arrival_ms for r in trace]
        )
        summary = {
            "n_requests": len(trace),
            "n_completed": len(finished),
            "n_discarded": len(discarded),
            "n_met_slo": len(met),
            "slo_attainment": len(met) / len(trace),
            "goodput_rps": 1000.0 * len(met) / horizon_ms if horizon_ms > 0 else 0.0,
            "mean_latency_ms": sum(lat) / len(lat) if lat else 0.0,
            "p95_latency_ms": lat[int(0.95 * (len(lat) - 1))] if lat else 0.0,
            "makespan_ms": horizon_ms,
            "steps_run": sum(w.steps_run for w in workers),
            "skipped_patches": skipped,
            "computed_patches": computed,
        }
        if self.cfg.plane == "numeric" and self.cfg.use_cache:
            agg: dict = {}
            for w in workers:
                for k, v in w.cache.stats.as_dict().items():
                    agg[k] = agg.get(k, 0) + v
            summary["cache"] = agg
        return summary
