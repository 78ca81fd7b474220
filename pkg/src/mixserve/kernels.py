"""Dense float64 reference kernels: convolution, normalization, attention, pixel-wise ops.

All kernels are pure functions over numpy arrays in NCHW layout (token ops use
(N, T, D)).  Channel contractions accumulate in explicit channel order so that
results are bit-identical whether an image is processed whole or as patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

# Query rows per softmax chunk; fixed so repeated runs are bit-reproducible.
ATTN_CHUNK = 256


def _as_f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise InputError("non-finite values in input")
    return a


@dataclass(frozen=True)
class ConvParams:
    """2D convolution with zero padding; kernel size 1 or 3."""

    weights: np.ndarray  # (C_out, C_in, k, k)
    bias: np.ndarray  # (C_out,)

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise InputError(f"conv weights must be (C_out,C_in,k,k), got {w.shape}")
        if w.shape[2] not in (1, 3):
            raise InputError(f"kernel size must be 1 or 3, got {w.shape[2]}")
        if np.asarray(self.bias).shape != (w.shape[0],):
            raise InputError("conv bias must be (C_out,)")

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]

    @property
    def padding(self) -> int:
        return self.kernel_size // 2


@dataclass(frozen=True)
class GroupNormParams:
    groups: int
    gamma: np.ndarray  # (C,)
    beta: np.ndarray  # (C,)
    eps: float = 1e-5

    def __post_init__(self):
        if self.groups < 1:
            raise InputError("groups must be >= 1")
        if self.eps <= 0:
            raise InputError("eps must be positive")


@dataclass(frozen=True)
class LayerNormParams:
    gamma: np.ndarray  # (C,)
    beta: np.ndarray  # (C,)
    eps: float = 1e-5


@dataclass(frozen=True)
class LinearParams:
    weights: np.ndarray  # (C_out, C_in)
    bias: np.ndarray  # (C_out,)


@dataclass(frozen=True)
class FeedForwardParams:
    """Per-pixel MLP: linear -> gelu -> linear over the channel axis."""

    w1: np.ndarray  # (hidden, C)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (C, hidden)
    b2: np.ndarray  # (C,)


@dataclass(frozen=True)
class AttentionParams:
    """Token projections around scaled-dot-product attention."""

    wq: np.ndarray  # (D, D)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray


def _channel_matmul(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    # x: (N, C_in, ...spatial); contract channel axis in fixed order so the
    # result per pixel does not depend on how pixels are grouped into arrays.
    c_out, c_in = w.shape
    if x.shape[1] != c_in:
        raise InputError(f"channel mismatch: weights expect {c_in}, input has {x.shape[1]}")
    out = np.empty((x.shape[0], c_out) + x.shape[2:], dtype=np.float64)
    for o in range(c_out):
        acc = np.full(x.shape[:1] + x.shape[2:], b[o], dtype=np.float64)
        for c in range(c_in):
            acc += w[o, c] * x[:, c]
        out[:, o] = acc
    return out


def linear(x: np.ndarray, p: LinearParams) -> np.ndarray:
    return _channel_matmul(_as_f64(p.weights), _as_f64(p.bias), _as_f64(x))


def gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation; exact erf is not needed, only a fixed nonlinearity
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)))


def feed_forward(x: np.ndarray, p: FeedForwardParams) -> np.ndarray:
    h = _channel_matmul(_as_f64(p.w1), _as_f64(p.b1), _as_f64(x))
    h = gelu(h)
    return _channel_matmul(_as_f64(p.w2), _as_f64(p.b2), h)


def residual_add(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x, y = _as_f64(x), _as_f64(y)
    if x.shape != y.shape:
        raise InputError(f"residual shape mismatch: {x.shape} vs {y.shape}")
    return x + y


def pixelwise(op_kind: str, x: np.ndarray, params) -> np.ndarray:
    """Dispatch a position-independent op: 'linear', 'feed_forward', or 'residual_add'."""
    if op_kind == "linear":
        return linear(x, params)
    if op_kind == "feed_forward":
        return feed_forward(x, params)
    if op_kind == "residual_add":
        return residual_add(x, params)
    raise InputError(f"unknown pixelwise op {op_kind!r}")


def _conv_valid(xpad: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # xpad: (N, C_in, H + k - 1, W + k - 1) already padded; valid convolution.
    n, c_in, hp, wp = xpad.shape
    c_out, _, k, _ = w.shape
    h, wd = hp - k + 1, wp - k + 1
    out = np.empty((n, c_out, h, wd), dtype=np.float64)
    for o in range(c_out):
        acc = np.full((n, h, wd), b[o], dtype=np.float64)
        for c in range(c_in):
            for ki in range(k):
                for kj in range(k):
                    acc += w[o, c, ki, kj] * xpad[:, c, ki:ki + h, kj:kj + wd]
        out[:, o] = acc
    return out


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """NCHW convolution with zero padding at image borders."""
    x = _as_f64(x)
    if x.ndim != 4:
        raise InputError(f"conv2d expects (N,C,H,W), got shape {x.shape}")
    w = _as_f64(p.weights)
    if x.shape[1] != w.shape[1]:
        raise InputError(f"conv2d channel mismatch: {x.shape[1]} vs {w.shape[1]}")
    pad = p.padding
    if pad:
        xpad = np.zeros((x.shape[0], x.shape[1], x.shape[2] + 2 * pad, x.shape[3] + 2 * pad))
        xpad[:, :, pad:-pad, pad:-pad] = x
    else:
        xpad = x
    return _conv_valid(xpad, w, _as_f64(p.bias))


def _group_stats(x: np.ndarray, groups: int):
    # x: (N, C, H, W); returns per (image, group) mean and variance.
    n, c, h, w = x.shape
    xg = x.reshape(n, groups, (c // groups) * h * w)
    mean = xg.mean(axis=2)
    var = ((xg - mean[:, :, None]) ** 2).mean(axis=2)
    return mean, var


def group_norm(x: np.ndarray, p: GroupNormParams) -> np.ndarray:
    """Group normalization with statistics pooled per image."""
    x = _as_f64(x)
    if x.ndim != 4:
        raise InputError(f"group_norm expects (N,C,H,W), got shape {x.shape}")
    n, c, h, w = x.shape
    if c % p.groups != 0:
        raise InputError(f"groups={p.groups} does not divide channels={c}")
    mean, var = _group_stats(x, p.groups)
    cg = c // p.groups
    xn = (x.reshape(n, p.groups, cg, h, w) - mean[:, :, None, None, None]) / np.sqrt(
        var[:, :, None, None, None] + p.eps
    )
    xn = xn.reshape(n, c, h, w)
    gamma = _as_f64(p.gamma)[None, :, None, None]
    beta = _as_f64(p.beta)[None, :, None, None]
    return xn * gamma + beta


def layer_norm(x: np.ndarray, p: LayerNormParams) -> np.ndarray:
    """Per-position normalization over the channel axis (used by attention-only blocks)."""
    x = _as_f64(x)
    c = x.shape[1]
    # explicit channel-order accumulation keeps patched/whole results bit-equal
    s = x[:, 0].copy()
    for ci in range(1, c):
        s += x[:, ci]
    mean = s / c
    v = (x[:, 0] - mean) ** 2
    for ci in range(1, c):
        v += (x[:, ci] - mean) ** 2
    var = v / c
    inv = 1.0 / np.sqrt(var + p.eps)
    out = np.empty_like(x)
    gamma, beta = _as_f64(p.gamma), _as_f64(p.beta)
    for ci in range(c):
        out[:, ci] = (x[:, ci] - mean) * inv * gamma[ci] + beta[ci]
    return out


def _attend_single(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    # q,k,v: (T, D). Row-chunked softmax(q k^T / sqrt(D)) v; chunk size is fixed
    # so the same tokens always produce the same bits.
    t, d = q.shape
    scale = 1.0 / np.sqrt(d)
    kt = np.ascontiguousarray(k.T)
    out = np.empty_like(v)
    for i in range(0, t, ATTN_CHUNK):
        s = (q[i:i + ATTN_CHUNK] @ kt) * scale
        s -= s.max(axis=1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=1, keepdims=True)
        out[i:i + ATTN_CHUNK] = s @ v
    return out


def self_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Scaled-dot-product attention over (N, T, D); each sequence is computed independently."""
    q, k, v = _as_f64(q), _as_f64(k), _as_f64(v)
    if not (q.shape == k.shape == v.shape) or q.ndim != 3:
        raise InputError(f"q/k/v must share one (N,T,D) shape, got {q.shape}, {k.shape}, {v.shape}")
    out = np.empty_like(v)
    for n in range(q.shape[0]):
        out[n] = _attend_single(q[n], k[n], v[n])
    return out


def attend_tokens(tokens: np.ndarray, p: AttentionParams) -> np.ndarray:
    """Project one image's tokens (T, D) to q/k/v, attend, and project the output.

    Both the whole-image path and the patched path call this routine, which is
    what makes attention-only pipelines bit-identical between the two.
    """
    tokens = _as_f64(tokens)
    q = tokens @ p.wq
    k = tokens @ p.wk
    v = tokens @ p.wv
    return _attend_single(q, k, v) @ p.wo


def image_to_tokens(img: np.ndarray) -> np.ndarray:
    # (C, H, W) -> (H*W, C), row-major pixel order
    c = img.shape[0]
    return img.reshape(c, -1).T.copy()


def tokens_to_image(tokens: np.ndarray, h: int, w: int) -> np.ndarray:
    return tokens.T.reshape(tokens.shape[1], h, w).copy()
