"""Patch-level reuse cache, one store per model block.

Every cached patch holds an input snapshot, an output snapshot, and a reuse
streak.  A patch is predicted reusable when an entry exists, the mean squared
difference between the fresh input and the snapshot stays under the threshold,
and the streak is below the forced-refresh bound.  Entries are immutable;
"mutation" replaces them, so a shallow per-block dict copy is a consistent
snapshot and steps can roll back atomically.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Hashable, Sequence

import numpy as np

from .errors import InputError, IntegrityError

Key = Hashable  # (request_id, ordinal) in the serving path


@dataclass(frozen=True)
class PredictorConfig:
    mse_threshold: float = 0.1
    max_streak: int = 3

    def __post_init__(self):
        if self.mse_threshold <= 0:
            raise InputError("mse_threshold must be positive")
        if self.max_streak < 1:
            raise InputError("max_streak must be >= 1")


@dataclass(frozen=True)
class CacheEntry:
    input_snapshot: np.ndarray
    output_snapshot: np.ndarray
    reuse_streak: int = 0


@dataclass
class CacheStats:
    predicted_reuse: int = 0
    fresh_compute: int = 0
    inserted: int = 0
    refreshed: int = 0
    evicted: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))


def partition_sets(prev_keys: Sequence[Key], cur_keys: Sequence[Key]):
    """Split a composition change into (common, new, expired) key lists.

    Common and new keep current-step order, expired keeps previous-step order,
    so downstream bookkeeping is deterministic.
    """
    prev_set, cur_set = set(prev_keys), set(cur_keys)
    if len(prev_set) != len(prev_keys) or len(cur_set) != len(cur_keys):
        raise InputError("duplicate keys in partition input")
    common = [k for k in cur_keys if k in prev_set]
    new = [k for k in cur_keys if k not in prev_set]
    expired = [k for k in prev_keys if k not in cur_set]
    return common, new, expired


class BlockCache:
    """Per-block patch cache with batched predict / fill / update / evict ops."""

    def __init__(self, n_blocks: int, cfg: PredictorConfig | None = None,
                 predictor: Callable[[CacheEntry, np.ndarray], bool] | None = None):
        if n_blocks < 1:
            raise InputError("n_blocks must be >= 1")
        self.cfg = cfg or PredictorConfig()
        self._stores: list[dict[Key, CacheEntry]] = [{} for _ in range(n_blocks)]
        self._predictor = predictor or self._mse_predictor
        self.stats = CacheStats()

    # ------------------------------------------------------------- helpers

    def _mse_predictor(self, entry: CacheEntry, x: np.ndarray) -> bool:
        return mse(x, entry.input_snapshot) < self.cfg.mse_threshold

    def _store(self, block_id: int) -> dict[Key, CacheEntry]:
        if not 0 <= block_id < len(self._stores):
            raise InputError(f"block_id {block_id} out of range [0, {len(self._stores)})")
        return self._stores[block_id]

    @property
    def n_blocks(self) -> int:
        return len(self._stores)

    def entry(self, block_id: int, key: Key) -> CacheEntry | None:
        return self._store(block_id).get(key)

    def size(self) -> int:
        return sum(len(s) for s in self._stores)

    # ----------------------------------------------------------- batch ops

    def predict_reuse(self, block_id: int, keys: Sequence[Key], inputs: np.ndarray) -> np.ndarray:
        """Bool mask: entry exists, predictor accepts the fresh input, streak below bound."""
        store = self._store(block_id)
        if len(keys) != len(inputs):
            raise InputError("keys and inputs length mismatch")
        mask = np.zeros(len(keys), dtype=bool)
        for i, k in enumerate(keys):
            e = store.get(k)
            mask[i] = (
                e is not None
                and self._predictor(e, inputs[i])
                and e.reuse_streak < self.cfg.max_streak
            )
        self.stats.predicted_reuse += int(mask.sum())
        self.stats.fresh_compute += int((~mask).sum())
        return mask

    def gather(self, block_id: int, keys: Sequence[Key], mask: np.ndarray,
               shape: tuple) -> tuple[np.ndarray, np.ndarray]:
        """Cached (inputs, outputs) arrays for masked positions; zeros elsewhere."""
        store = self._store(block_id)
        ins = np.zeros((len(keys),) + tuple(shape))
        outs = np.zeros_like(ins)
        for i, k in enumerate(keys):
            if mask[i]:
                e = store.get(k)
                if e is None:
                    raise IntegrityError(f"masked patch {k!r} missing from block {block_id}")
                ins[i] = e.input_snapshot
                outs[i] = e.output_snapshot
        return ins, outs

    def batched_fill(self, block_id: int, keys: Sequence[Key], mask: np.ndarray,
                     out: np.ndarray | None = None) -> np.ndarray | None:
        """Serve masked patches from output snapshots and advance their streaks."""
        store = self._store(block_id)
        for i, k in enumerate(keys):
            if mask[i]:
                e = store.get(k)
                if e is None:
                    raise IntegrityError(f"masked patch {k!r} missing from block {block_id}")
                if out is not None:
                    out[i] = e.output_snapshot
                store[k] = replace(e, reuse_streak=e.reuse_streak + 1)
        return out

    def batched_update(self, block_id: int, keys: Sequence[Key], mask: np.ndarray,
                       inputs: np.ndarray, outputs: np.ndarray) -> None:
        """Store fresh snapshots (streak 0) for every unmasked patch."""
        store = self._store(block_id)
        if not (len(keys) == len(inputs) == len(outputs)):
            raise InputError("keys/inputs/outputs length mismatch")
        for i, k in enumerate(keys):
            if not mask[i]:
                if k in store:
                    self.stats.refreshed += 1
                else:
                    self.stats.inserted += 1
                store[k] = CacheEntry(
                    input_snapshot=np.array(inputs[i], copy=True),
                    output_snapshot=np.array(outputs[i], copy=True),
                    reuse_streak=0,
                )

    def evict_expired(self, live_keys: Sequence[Key]) -> int:
        """Drop entries for patches no longer in any active request; returns the count."""
        live = set(live_keys)
        n = 0
        for store in self._stores:
            dead = [k for k in store if k not in live]
            for k in dead:
                del store[k]
            n += len(dead)
        self.stats.evicted += n
        return n

    # ------------------------------------------------------ atomic steps

    def snapshot(self) -> list[dict]:
        """Shallow per-block copy; safe because entries are never mutated in place."""
        return [dict(s) for s in self._stores]

    def restore(self, snap: list[dict]) -> None:
        if len(snap) != len(self._stores):
            raise IntegrityError("snapshot block count mismatch")
        self._stores = [dict(s) for s in snap]
