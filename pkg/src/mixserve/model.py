"""Toy latent denoiser used as the numeric data plane.

Two small architectures share one block interpreter:

* ``unet_like``: group_norm -> 3x3 conv -> attention -> feed_forward -> residual
* ``dit_like``: layer_norm -> attention -> feed_forward -> residual

Blocks are described as (kind, params) stage lists so the same weights drive
both the dense whole-image path and the patched path.  The dit_like stack uses
only position-wise and attention stages, which the patched operators reproduce
bit for bit; unet_like adds pooled group-norm statistics, which match to
floating-point roundoff.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import kernels
from .csp import CSPBatch
from .errors import InputError
from .kernels import (
    AttentionParams,
    ConvParams,
    FeedForwardParams,
    GroupNormParams,
    LayerNormParams,
)
from .patched import run_block

ARCHS = ("unet_like", "dit_like")

RATE_START = 0.15
RATE_END = 0.05


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "dit_like"
    channels: int = 4
    hidden: int = 8
    n_blocks: int = 2
    groups: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise InputError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.channels % self.groups != 0:
            raise InputError("groups must divide channels")


def rate_schedule(step_idx: int, total_steps: int) -> float:
    """Update rate, linear from RATE_START at step 0 down to RATE_END at the last step."""
    if not 0 <= step_idx < total_steps:
        raise InputError(f"step {step_idx} outside [0, {total_steps})")
    if total_steps == 1:
        return RATE_START
    frac = step_idx / (total_steps - 1)
    return RATE_START + (RATE_END - RATE_START) * frac


def init_weights(cfg: ModelConfig) -> list[list[tuple]]:
    """Per-block (kind, params) stage lists, deterministic in cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    c, h = cfg.channels, cfg.hidden
    blocks = []
    for _ in range(cfg.n_blocks):
        gamma = 1.0 + 0.05 * rng.normal(size=c)
        beta = 0.05 * rng.normal(size=c)
        at = AttentionParams(*(rng.normal(size=(c, c)) * (0.8 / np.sqrt(c)) for _ in range(4)))
        ff = FeedForwardParams(
            w1=rng.normal(size=(h, c)) * (0.8 / np.sqrt(c)),
            b1=0.01 * rng.normal(size=h),
            w2=rng.normal(size=(c, h)) * (0.8 / np.sqrt(h)),
            b2=0.01 * rng.normal(size=c),
        )
        if cfg.arch == "unet_like":
            gn = GroupNormParams(groups=cfg.groups, gamma=gamma, beta=beta)
            c3 = ConvParams(
                weights=rng.normal(size=(c, c, 3, 3)) * (0.8 / np.sqrt(9 * c)),
                bias=0.01 * rng.normal(size=c),
            )
            ops = [("group_norm", gn), ("conv", c3), ("attention", at),
                   ("feed_forward", ff), ("residual", None)]
        else:
            ln = LayerNormParams(gamma=gamma, beta=beta)
            ops = [("layer_norm", ln), ("attention", at),
                   ("feed_forward", ff), ("residual", None)]
        blocks.append(ops)
    return blocks


def make_prompt(cfg: ModelConfig, request_id: str) -> np.ndarray:
    """Deterministic per-request conditioning vector (C,)."""
    # crc32, not hash(): str hashing is salted per process and would break
    # byte-identical reruns of numeric simulations across invocations
    digest = (zlib.crc32(request_id.encode()) ^ (cfg.seed * 0x9E3779B9)) & 0xFFFFFFFF
    rng = np.random.default_rng(digest)
    return 0.1 * rng.normal(size=cfg.channels)


def _run_block_whole(img: np.ndarray, ops) -> np.ndarray:
    x = img[None]
    cur = x
    for kind, params in ops:
        if kind == "group_norm":
            cur = kernels.group_norm(cur, params)
        elif kind == "layer_norm":
            cur = kernels.layer_norm(cur, params)
        elif kind == "conv":
            cur = kernels.conv2d(cur, params)
        elif kind == "attention":
            hh, ww = cur.shape[2], cur.shape[3]
            t = kernels.attend_tokens(kernels.image_to_tokens(cur[0]), params)
            cur = kernels.tokens_to_image(t, hh, ww)[None]
        elif kind in ("feed_forward", "linear"):
            cur = kernels.pixelwise(kind, cur, params)
        elif kind == "residual":
            cur = cur + x
        else:
            raise InputError(f"unknown block stage {kind!r}")
    return cur[0]


def blend(x: np.ndarray, h: np.ndarray, rate) -> np.ndarray:
    """One denoising update: pull x toward the bounded block output."""
    return (1.0 - rate) * x + rate * np.tanh(h)


def denoise_image(cfg: ModelConfig, weights, img: np.ndarray, prompt: np.ndarray,
                  step_idx: int, total_steps: int) -> np.ndarray:
    """Dense reference step on a single (C, H, W) latent."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] != cfg.channels:
        raise InputError(f"latent has {img.shape[0]} channels, model expects {cfg.channels}")
    h = img + np.asarray(prompt, dtype=np.float64)[:, None, None]
    for ops in weights:
        h = _run_block_whole(h, ops)
    return blend(img, h, rate_schedule(step_idx, total_steps))


def denoise_batch(cfg: ModelConfig, weights, batch: CSPBatch,
                  prompts: dict[str, np.ndarray],
                  step_idx: dict[str, int], total_steps: dict[str, int]) -> np.ndarray:
    """Patched step over a mixed batch; returns the updated (P, C, ps, ps) data.

    ``step_idx`` and ``total_steps`` are per request: a batch freely mixes
    requests at different points in their schedules.
    """
    if batch.data.shape[1] != cfg.channels:
        raise InputError(f"batch has {batch.data.shape[1]} channels, model expects {cfg.channels}")
    bias = np.empty((batch.n_requests, cfg.channels))
    rate = np.empty(batch.n_requests)
    for slot, e in enumerate(batch.requests):
        if e.request_id not in prompts:
            raise InputError(f"missing prompt for request {e.request_id!r}")
        bias[slot] = prompts[e.request_id]
        rate[slot] = rate_schedule(step_idx[e.request_id], total_steps[e.request_id])
    h = batch.data + bias[batch.request_index][:, :, None, None]
    for ops in weights:
        h = run_block(batch, h, ops)
    return blend(batch.data, h, rate[batch.request_index][:, None, None, None])
