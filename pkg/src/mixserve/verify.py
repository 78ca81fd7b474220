"""Self-contained equivalence checks, runnable via the CLI.

Each check builds its own small instance, compares the optimized path against
a plainly written reference, and returns (name, ok, detail).  They mirror the
test suite's oracles so a deployment can sanity-check itself without pytest.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .cache import BlockCache, PredictorConfig, partition_sets
from .csp import reassemble, split
from .engine import Engine, EngineConfig
from .latency import count_combinations, step_latency
from .model import ModelConfig, denoise_batch, denoise_image, init_weights, make_prompt
from .patched import masked_block_forward, run_block
from .scheduler import SchedulerConfig
from .workload import WorkloadConfig, generate_trace


def _toy_batch(rng, dims=(8, 12, 8), channels=4, ps=4):
    reqs = [(f"r{i}", rng.normal(size=(channels, d, d))) for i, d in enumerate(dims)]
    return reqs, split(reqs, patch_size=ps)


def _model_pair(arch, seed):
    cfg = ModelConfig(arch=arch, n_blocks=2, seed=seed)
    return cfg, init_weights(cfg)


def _run_dense(cfg, weights, reqs, prompts):
    out = {}
    for rid, lat in reqs:
        out[rid] = denoise_image(cfg, weights, lat, prompts[rid], 0, 4)
    return out


def _run_patched(cfg, weights, batch, prompts):
    si = {e.request_id: 0 for e in batch.requests}
    ts = {e.request_id: 4 for e in batch.requests}
    return reassemble(batch, denoise_batch(cfg, weights, batch, prompts, si, ts))


def check_dit_bit_identity() -> tuple[str, bool, str]:
    rng = np.random.default_rng(100)
    reqs, batch = _toy_batch(rng)
    cfg, w = _model_pair("dit_like", 1)
    prompts = {rid: make_prompt(cfg, rid) for rid, _ in reqs}
    dense = _run_dense(cfg, w, reqs, prompts)
    patched = _run_patched(cfg, w, batch, prompts)
    worst = max(np.max(np.abs(dense[r] - patched[r])) for r, _ in reqs)
    return "dit_bit_identity", worst == 0.0, f"max |diff| = {worst:.3e}"


def check_unet_tolerance() -> tuple[str, bool, str]:
    rng = np.random.default_rng(101)
    reqs, batch = _toy_batch(rng)
    cfg, w = _model_pair("unet_like", 2)
    prompts = {rid: make_prompt(cfg, rid) for rid, _ in reqs}
    dense = _run_dense(cfg, w, reqs, prompts)
    patched = _run_patched(cfg, w, batch, prompts)
    worst = max(np.max(np.abs(dense[r] - patched[r])) for r, _ in reqs)
    return "unet_tolerance", worst <= 1e-10, f"max |diff| = {worst:.3e} (budget 1e-10)"


def check_masked_substitution() -> tuple[str, bool, str]:
    rng = np.random.default_rng(102)
    reqs, batch = _toy_batch(rng, dims=(8, 12))
    cfg, w = _model_pair("dit_like", 3)
    ops = w[0]
    x_prev = batch.data
    y_prev = run_block(batch, x_prev, ops)
    x_cur = x_prev + 0.05 * rng.normal(size=x_prev.shape)
    mask = rng.random(batch.n_patches) < 0.5
    got = masked_block_forward(batch, x_cur, mask, ops, x_prev, y_prev)
    # reference: paste cached inputs into the stitched image, run dense, splice
    ps = batch.patch_size
    worst = 0.0
    x_sub = np.where(mask[:, None, None, None], x_prev, x_cur)
    for e in batch.requests:
        img = np.empty((batch.data.shape[1], e.latent, e.latent))
        for k in range(e.patch_count):
            p = e.patch_start + k
            r, c = int(batch.row[p]), int(batch.col[p])
            img[:, r * ps:(r + 1) * ps, c * ps:(c + 1) * ps] = x_sub[p]
        dense = _dense_block(img, ops)
        for k in range(e.patch_count):
            p = e.patch_start + k
            r, c = int(batch.row[p]), int(batch.col[p])
            want = y_prev[p] if mask[p] else dense[:, r * ps:(r + 1) * ps, c * ps:(c + 1) * ps]
            worst = max(worst, float(np.max(np.abs(got[p] - want))))
    return "masked_substitution", worst <= 1e-12, f"max |diff| = {worst:.3e} (budget 1e-12)"


def _dense_block(img, ops):
    x = img[None]
    cur = x
    for kind, params in ops:
        if kind == "layer_norm":
            cur = kernels.layer_norm(cur, params)
        elif kind == "attention":
            t = kernels.attend_tokens(kernels.image_to_tokens(cur[0]), params)
            cur = kernels.tokens_to_image(t, img.shape[1], img.shape[2])[None]
        elif kind == "feed_forward":
            cur = kernels.feed_forward(cur, params)
        elif kind == "residual":
            cur = cur + x
        elif kind == "group_norm":
            cur = kernels.group_norm(cur, params)
        elif kind == "conv":
            cur = kernels.conv2d(cur, params)
    return cur[0]


def check_cache_roundtrip() -> tuple[str, bool, str]:
    rng = np.random.default_rng(103)
    cache = BlockCache(2, PredictorConfig())
    shape = (2, 3, 3)
    keys = [("r", i) for i in range(4)]
    x = rng.normal(size=(4,) + shape)
    y = np.tanh(x)
    cache.batched_update(0, keys, np.zeros(4, dtype=bool), x, y)
    mask = cache.predict_reuse(0, keys, x)
    out = np.zeros_like(x)
    cache.batched_fill(0, keys, mask, out)
    ok = bool(mask.all()) and np.array_equal(out, y)
    streaks = [cache.entry(0, k).reuse_streak for k in keys]
    ok = ok and streaks == [1, 1, 1, 1]
    common, new, expired = partition_sets(keys, keys[2:] + [("s", 0)])
    ok = ok and common == keys[2:] and new == [("s", 0)] and expired == keys[:2]
    return "cache_roundtrip", ok, f"mask={mask.tolist()}, streaks={streaks}"


def check_cost_calibration() -> tuple[str, bool, str]:
    hi_lo = step_latency({"high": 3}) / step_latency({"low": 3})
    mixed = step_latency({"low": 1, "med": 1, "high": 1})
    singles = sum(step_latency({c: 1}) for c in ("low", "med", "high"))
    ratio = mixed / singles
    ok = 1.5 <= hi_lo <= 1.9 and 0.45 <= ratio <= 0.65
    return "cost_calibration", ok, f"high/low = {hi_lo:.4f}, mixed/singles = {ratio:.4f}"


def check_combinations() -> tuple[str, bool, str]:
    got = count_combinations(3, 3)
    brute = sum(
        1
        for a in range(13)
        for b in range(13)
        for c in range(13)
        if 1 <= a + b + c <= 12
    )
    ok = got == 19 and count_combinations(12, 3) == brute
    return "combinations", ok, f"count(3,3) = {got}, count(12,3) = {count_combinations(12, 3)}"


def check_simulation_determinism() -> tuple[str, bool, str]:
    trace = generate_trace(WorkloadConfig(seed=17, qps=1.0, n_requests=15))
    mk = lambda: Engine(EngineConfig(
        plane="cost_only", total_steps=50, scheduler=SchedulerConfig(policy="slo_aware")
    ))
    a, b = mk().run(trace), mk().run(trace)
    ok = a.events == b.events and a.completions == b.completions and a.summary == b.summary
    return "simulation_determinism", ok, f"{len(a.events)} events reproduced"


ALL_CHECKS = (
    check_dit_bit_identity,
    check_unet_tolerance,
    check_masked_substitution,
    check_cache_roundtrip,
    check_cost_calibration,
    check_combinations,
    check_simulation_determinism,
)


def run_all() -> list[tuple[str, bool, str]]:
    return [fn() for fn in ALL_CHECKS]
