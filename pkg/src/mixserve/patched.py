"""Patched operators over CSP batches: halo exchange, stitched norms, masked blocks.

Each operator consumes a (P, C, ps, ps) patch array plus the batch's neighbor
table and produces results equal to running the dense kernel on the stitched
images.  Context flows between patches through 1-pixel halo frames; patches at
image borders see zeros, matching the dense kernels' zero padding.

A module-level launch counter records one launch per fused stage, independent
of batch size, mirroring how a grouped GPU kernel would be dispatched.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from . import kernels
from .csp import CSPBatch
from .errors import InputError
from .kernels import (
    ConvParams,
    GroupNormParams,
    _conv_valid,
    attend_tokens,
    image_to_tokens,
    tokens_to_image,
)

# direction indices into CSPBatch.neighbors
_N, _NE, _E, _SE, _S, _SW, _W, _NW = range(8)

_launches: Counter = Counter()


def reset_launch_counters() -> None:
    _launches.clear()


def launch_counters() -> dict:
    return dict(_launches)


def _launch(kind: str) -> None:
    _launches[kind] += 1


def _check_data(batch: CSPBatch, data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 4 or data.shape[0] != batch.n_patches or data.shape[2:] != (batch.patch_size,) * 2:
        raise InputError(
            f"patch data must be ({batch.n_patches},C,{batch.patch_size},{batch.patch_size}), got {data.shape}"
        )
    return data


def exchange_halos(batch: CSPBatch, data: np.ndarray) -> np.ndarray:
    """Build (P, C, ps+2, ps+2) frames: patch pixels plus a 1-pixel ring of neighbor context."""
    data = _check_data(batch, data)
    p_n, c, ps, _ = data.shape
    frames = np.zeros((p_n, c, ps + 2, ps + 2))
    frames[:, :, 1:-1, 1:-1] = data
    nb = batch.neighbors
    for p in range(p_n):
        q = nb[p, _N]
        if q >= 0:
            frames[p, :, 0, 1:-1] = data[q, :, -1, :]
        q = nb[p, _S]
        if q >= 0:
            frames[p, :, -1, 1:-1] = data[q, :, 0, :]
        q = nb[p, _W]
        if q >= 0:
            frames[p, :, 1:-1, 0] = data[q, :, :, -1]
        q = nb[p, _E]
        if q >= 0:
            frames[p, :, 1:-1, -1] = data[q, :, :, 0]
        q = nb[p, _NW]
        if q >= 0:
            frames[p, :, 0, 0] = data[q, :, -1, -1]
        q = nb[p, _NE]
        if q >= 0:
            frames[p, :, 0, -1] = data[q, :, -1, 0]
        q = nb[p, _SW]
        if q >= 0:
            frames[p, :, -1, 0] = data[q, :, 0, -1]
        q = nb[p, _SE]
        if q >= 0:
            frames[p, :, -1, -1] = data[q, :, 0, 0]
    return frames


def patched_conv(batch: CSPBatch, data: np.ndarray, p: ConvParams,
                 frames: np.ndarray | None = None) -> np.ndarray:
    """Convolution over patches; k=3 reads neighbor context from halo frames.

    Pass `frames` when a previous fused stage already emitted them; otherwise
    they are exchanged here (counted as a separate launch).
    """
    data = _check_data(batch, data)
    if data.shape[1] != p.weights.shape[1]:
        raise InputError(f"conv channel mismatch: {data.shape[1]} vs {p.weights.shape[1]}")
    if p.kernel_size == 1:
        _launch("conv")
        return _conv_valid(data, np.asarray(p.weights, dtype=np.float64),
                           np.asarray(p.bias, dtype=np.float64))
    if frames is None:
        frames = exchange_halos(batch, data)
        _launch("halo_exchange")
    elif frames.shape != (batch.n_patches, data.shape[1], batch.patch_size + 2, batch.patch_size + 2):
        raise InputError(f"bad halo frame shape {frames.shape}")
    _launch("conv")
    return _conv_valid(frames, np.asarray(p.weights, dtype=np.float64),
                       np.asarray(p.bias, dtype=np.float64))


def stitched_group_norm(batch: CSPBatch, data: np.ndarray, p: GroupNormParams,
                        emit_halos: bool = False):
    """Group norm with statistics pooled over each request's patches.

    With `emit_halos=True` the halo frames of the normalized output are built
    in the same traversal and returned alongside it, so a following k=3 conv
    needs no separate exchange; this fusion is why it counts as one launch.
    """
    data = _check_data(batch, data)
    c = data.shape[1]
    if c % p.groups != 0:
        raise InputError(f"groups={p.groups} does not divide channels={c}")
    cg = c // p.groups
    out = np.empty_like(data)
    gamma = np.asarray(p.gamma, dtype=np.float64)
    beta = np.asarray(p.beta, dtype=np.float64)
    for e in batch.requests:
        sl = slice(e.patch_start, e.patch_start + e.patch_count)
        v = data[sl].reshape(e.patch_count, p.groups, cg, batch.patch_size, batch.patch_size)
        # two-pass pooled stats across all of this image's patches
        mean = v.mean(axis=(0, 2, 3, 4))
        var = ((v - mean[None, :, None, None, None]) ** 2).mean(axis=(0, 2, 3, 4))
        xn = (v - mean[None, :, None, None, None]) / np.sqrt(var[None, :, None, None, None] + p.eps)
        out[sl] = xn.reshape(e.patch_count, c, batch.patch_size, batch.patch_size) \
            * gamma[None, :, None, None] + beta[None, :, None, None]
    _launch("group_norm")
    if emit_halos:
        return out, exchange_halos(batch, out)
    return out


def patched_layer_norm(batch: CSPBatch, data: np.ndarray, p: kernels.LayerNormParams) -> np.ndarray:
    """Per-position layer norm; needs no context, so it runs straight on the patch array."""
    data = _check_data(batch, data)
    _launch("layer_norm")
    return kernels.layer_norm(data, p)


def patched_self_attention(batch: CSPBatch, data: np.ndarray, p: kernels.AttentionParams) -> np.ndarray:
    """Global self-attention per image: patches are stitched, attended, and re-split.

    Stitching and splitting move pixels without arithmetic, and the attention
    itself runs through the same per-image routine as the dense path, so the
    two paths agree bit for bit.
    """
    data = _check_data(batch, data)
    ps = batch.patch_size
    out = np.empty_like(data)
    for e in batch.requests:
        img = np.empty((data.shape[1], e.latent, e.latent))
        for k in range(e.patch_count):
            q = e.patch_start + k
            r, c = int(batch.row[q]), int(batch.col[q])
            img[:, r * ps:(r + 1) * ps, c * ps:(c + 1) * ps] = data[q]
        res = tokens_to_image(attend_tokens(image_to_tokens(img), p), e.latent, e.latent)
        for k in range(e.patch_count):
            q = e.patch_start + k
            r, c = int(batch.row[q]), int(batch.col[q])
            out[q] = res[:, r * ps:(r + 1) * ps, c * ps:(c + 1) * ps]
    _launch("attention")
    return out


def run_block(batch: CSPBatch, x: np.ndarray, ops) -> np.ndarray:
    """Execute one block, a sequence of (kind, params) stages, over patch data.

    Kinds: group_norm, layer_norm, conv, attention, feed_forward, linear,
    residual (adds the block input back; params ignored).  A group_norm
    immediately followed by a k=3 conv emits fused halos for it.
    """
    x = _check_data(batch, x)
    block_in = x
    cur = x
    pending_frames = None
    for i, (kind, params) in enumerate(ops):
        if kind == "group_norm":
            fuse = (
                i + 1 < len(ops)
                and ops[i + 1][0] == "conv"
                and ops[i + 1][1].kernel_size == 3
            )
            if fuse:
                cur, pending_frames = stitched_group_norm(batch, cur, params, emit_halos=True)
            else:
                cur = stitched_group_norm(batch, cur, params)
                pending_frames = None
        elif kind == "conv":
            cur = patched_conv(batch, cur, params, frames=pending_frames)
            pending_frames = None
        elif kind == "layer_norm":
            cur = patched_layer_norm(batch, cur, params)
            pending_frames = None
        elif kind == "attention":
            cur = patched_self_attention(batch, cur, params)
            pending_frames = None
        elif kind in ("feed_forward", "linear"):
            cur = kernels.pixelwise(kind, cur, params)
            _launch(kind)
            pending_frames = None
        elif kind == "residual":
            cur = cur + block_in
            _launch("residual")
            pending_frames = None
        else:
            raise InputError(f"unknown block stage {kind!r}")
    return cur


def masked_block_forward(batch: CSPBatch, x: np.ndarray, mask: np.ndarray, ops,
                         cached_inputs: np.ndarray, cached_outputs: np.ndarray) -> np.ndarray:
    """Run a block while reusing cached results for masked patches.

    For masked patches the block neither recomputes nor re-reads fresh input:
    context ops see the cached previous-step input in those positions, and the
    cached previous-step output is spliced into the result.  A fully masked
    batch skips the block outright (no launches at all).
    """
    x = _check_data(batch, x)
    mask = np.asarray(mask)
    if mask.shape != (batch.n_patches,) or mask.dtype != np.bool_:
        raise InputError(f"mask must be ({batch.n_patches},) bool, got {mask.shape} {mask.dtype}")
    if mask.all():
        return np.array(cached_outputs, dtype=np.float64, copy=True)
    if not mask.any():
        return run_block(batch, x, ops)
    cached_inputs = _check_data(batch, cached_inputs)
    cached_outputs = _check_data(batch, cached_outputs)
    sel = mask[:, None, None, None]
    x_sub = np.where(sel, cached_inputs, x)
    y = run_block(batch, x_sub, ops)
    return np.where(sel, cached_outputs, y)
