"""Compressed sparse patch (CSP) batch format for mixed-resolution latents.

A batch of square latents is cut into fixed-size patches and stored as one
dense (P, C, ps, ps) array plus offset/index arrays, in the spirit of CSR:
patches are sorted by (resolution, request, ordinal), `request_offset` and
`resolution_offset` delimit contiguous runs, and an explicit 8-neighbor table
records intra-image adjacency for halo exchange.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

# clockwise from north; used to index the neighbor table
DIRECTIONS = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
_DIR_STEPS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
OPPOSITE = {d: DIRECTIONS[(i + 4) % 8] for i, d in enumerate(DIRECTIONS)}


@dataclass(frozen=True)
class ResolutionClass:
    """Named output resolution; latents live at 1/8 scale."""

    name: str
    pixel: int

    def __post_init__(self):
        if self.pixel % 8 != 0:
            raise InputError(f"pixel size must be divisible by 8, got {self.pixel}")

    @property
    def latent(self) -> int:
        return self.pixel // 8


STANDARD_CLASSES = {
    "low": ResolutionClass("low", 512),
    "med": ResolutionClass("med", 768),
    "high": ResolutionClass("high", 1024),
}


def choose_patch_size(latent_dims: Iterable[int]) -> int:
    """Largest patch size that tiles every latent exactly: the GCD of the dims."""
    dims = list(latent_dims)
    if not dims:
        raise InputError("no latent dims given")
    if any(d <= 0 for d in dims):
        raise InputError(f"latent dims must be positive, got {dims}")
    return math.gcd(*dims)


@dataclass(frozen=True)
class RequestEntry:
    request_id: str
    latent: int  # side length of the square latent
    side: int  # patches per row/column
    patch_start: int
    patch_count: int


@dataclass
class CSPBatch:
    patch_size: int
    data: np.ndarray  # (P, C, ps, ps)
    requests: list[RequestEntry]  # in storage order (resolution-major)
    request_offset: np.ndarray  # (R + 1,)
    resolution_dims: list[int]  # ascending latent dims present in the batch
    resolution_offset: np.ndarray  # (n_res + 1,) into the patch axis
    request_index: np.ndarray  # (P,) position of owning request in `requests`
    ordinal: np.ndarray  # (P,) row-major patch index within its image
    row: np.ndarray  # (P,)
    col: np.ndarray  # (P,)
    neighbors: np.ndarray  # (P, 8), -1 where the neighbor falls outside the image
    _slot: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._slot:
            self._slot = {e.request_id: i for i, e in enumerate(self.requests)}

    @property
    def n_patches(self) -> int:
        return self.data.shape[0]

    @property
    def n_requests(self) -> int:
        return len(self.requests)

    def request_slot(self, request_id: str) -> int:
        try:
            return self._slot[request_id]
        except KeyError:
            raise InputError(f"unknown request {request_id!r}") from None

    def patches_of_request(self, request_id: str) -> slice:
        r = self.request_slot(request_id)
        return slice(int(self.request_offset[r]), int(self.request_offset[r + 1]))

    def group_by_resolution(self) -> list[tuple[int, slice]]:
        """(latent_dim, patch_slice) per resolution group, ascending in dim."""
        out = []
        for g, dim in enumerate(self.resolution_dims):
            out.append((dim, slice(int(self.resolution_offset[g]), int(self.resolution_offset[g + 1]))))
        return out

    def patch_key(self, p: int) -> tuple[str, int]:
        """Stable identity of patch `p` across steps: (request_id, ordinal)."""
        return (self.requests[int(self.request_index[p])].request_id, int(self.ordinal[p]))


def split(requests: Sequence[tuple[str, np.ndarray]], patch_size: int | None = None) -> CSPBatch:
    """Cut (request_id, latent) pairs into a CSP batch.

    Latents are (C, H, H) with a shared channel count; `patch_size` defaults to
    the GCD of the latent dims.  Splitting copies pixels without arithmetic.
    """
    if not requests:
        raise InputError("empty batch")
    ids = [rid for rid, _ in requests]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate request ids in batch")
    arrs = []
    for rid, latent in requests:
        a = np.asarray(latent, dtype=np.float64)
        if a.ndim != 3 or a.shape[1] != a.shape[2]:
            raise InputError(f"latent for {rid!r} must be (C,H,H), got {a.shape}")
        arrs.append(a)
    channels = arrs[0].shape[0]
    if any(a.shape[0] != channels for a in arrs):
        raise InputError("all latents in a batch must share a channel count")
    dims = [a.shape[1] for a in arrs]
    ps = choose_patch_size(dims) if patch_size is None else patch_size
    if any(d % ps for d in dims):
        raise InputError(f"patch size {ps} does not tile latent dims {sorted(set(dims))}")

    # stable resolution-major order; ties keep arrival order
    order = sorted(range(len(requests)), key=lambda i: dims[i])
    entries: list[RequestEntry] = []
    request_offset = [0]
    start = 0
    for i in order:
        side = dims[i] // ps
        entries.append(RequestEntry(ids[i], dims[i], side, start, side * side))
        start += side * side
        request_offset.append(start)

    total = start
    data = np.empty((total, channels, ps, ps))
    request_index = np.empty(total, dtype=np.int64)
    ordinal = np.empty(total, dtype=np.int64)
    row = np.empty(total, dtype=np.int64)
    col = np.empty(total, dtype=np.int64)
    neighbors = np.full((total, 8), -1, dtype=np.int64)

    for slot, src in enumerate(order):
        e = entries[slot]
        a = arrs[src]
        for r in range(e.side):
            for c in range(e.side):
                p = e.patch_start + r * e.side + c
                data[p] = a[:, r * ps:(r + 1) * ps, c * ps:(c + 1) * ps]
                request_index[p] = slot
                ordinal[p] = r * e.side + c
                row[p], col[p] = r, c
                for d, (dr, dc) in enumerate(_DIR_STEPS):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < e.side and 0 <= cc < e.side:
                        neighbors[p, d] = e.patch_start + rr * e.side + cc

    res_dims = sorted(set(dims))
    resolution_offset = [0]
    for d in res_dims:
        resolution_offset.append(resolution_offset[-1] + sum(e.patch_count for e in entries if e.latent == d))
    # resolution-major sort makes each group contiguous; record cumulative ends
    return CSPBatch(
        patch_size=ps,
        data=data,
        requests=entries,
        request_offset=np.asarray(request_offset, dtype=np.int64),
        resolution_dims=res_dims,
        resolution_offset=np.asarray(resolution_offset, dtype=np.int64),
        request_index=request_index,
        ordinal=ordinal,
        row=row,
        col=col,
        neighbors=neighbors,
    )


def reassemble(batch: CSPBatch, data: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Stitch patches back into full latents, keyed by request id.

    `data` overrides the stored patch pixels (same (P, C, ps, ps) shape); this
    is how block outputs held patch-wise get folded back into images.
    """
    src = batch.data if data is None else np.asarray(data)
    if src.shape != batch.data.shape:
        raise InputError(f"data shape {src.shape} does not match batch {batch.data.shape}")
    ps = batch.patch_size
    out: dict[str, np.ndarray] = {}
    for e in batch.requests:
        img = np.empty((src.shape[1], e.latent, e.latent), dtype=src.dtype)
        for k in range(e.patch_count):
            p = e.patch_start + k
            r, c = int(batch.row[p]), int(batch.col[p])
            img[:, r * ps:(r + 1) * ps, c * ps:(c + 1) * ps] = src[p]
        out[e.request_id] = img
    return out
