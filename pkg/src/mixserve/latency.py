"""Step latency cost model and a small learned predictor.

The analytic model charges a fixed launch cost per step, an overhead per
distinct resolution present, and a per-block term that is linear in the patch
count plus superlinear (T^1.5) in each image's token count; attention over
more tokens is the term that makes mixed batches cheaper than serving each
resolution alone.  The MLP predictor learns the same mapping from batch
composition features, standing in for a profiled black box.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .csp import STANDARD_CLASSES
from .errors import InputError, TrainingError

CLASS_ORDER = ("low", "med", "high")


@dataclass(frozen=True)
class CostModelParams:
    blocks_per_step: int = 8
    c_step_fixed: float = 60.0  # ms
    c_res_overhead: float = 2.0  # ms per distinct resolution in the batch
    c_patch: float = 0.1  # ms per patch per block
    c_attn_coeff: float = 6e-7  # ms per token^1.5 per block
    attn_exponent: float = 1.5
    patch_size: int = 32


DEFAULT_COST = CostModelParams()


def _check_comp(comp: dict) -> dict:
    if not comp:
        raise InputError("empty composition")
    for k, v in comp.items():
        if k not in STANDARD_CLASSES:
            raise InputError(f"unknown resolution class {k!r}")
        if v < 0:
            raise InputError(f"negative count for {k!r}")
    if sum(comp.values()) == 0:
        raise InputError("composition has no requests")
    return comp


def step_latency(comp: dict, p: CostModelParams = DEFAULT_COST) -> float:
    """Analytic latency (ms) of one denoising step over a batch composition.

    `comp` maps resolution class name to request count, e.g. {"low": 2, "high": 1}.
    """
    _check_comp(comp)
    n_res = sum(1 for v in comp.values() if v > 0)
    patches = 0
    attn = 0.0
    for name, count in comp.items():
        if count == 0:
            continue
        latent = STANDARD_CLASSES[name].latent
        if latent % p.patch_size:
            raise InputError(f"patch size {p.patch_size} does not tile {name}")
        side = latent // p.patch_size
        patches += count * side * side
        tokens = latent * latent
        attn += count * tokens ** p.attn_exponent
    per_block = p.c_patch * patches + p.c_attn_coeff * attn
    return p.c_step_fixed + p.c_res_overhead * n_res + p.blocks_per_step * per_block


def standalone_latency(cls: str, steps: int, p: CostModelParams = DEFAULT_COST) -> float:
    """Latency of serving one request of class `cls` alone for `steps` steps."""
    if steps < 1:
        raise InputError("steps must be >= 1")
    return steps * step_latency({cls: 1}, p)


def composition_features(comp: dict, p: CostModelParams = DEFAULT_COST) -> np.ndarray:
    """[n_low, n_med, n_high, n_res, n_patches] feature vector."""
    _check_comp(comp)
    counts = [comp.get(c, 0) for c in CLASS_ORDER]
    n_res = sum(1 for v in counts if v > 0)
    patches = sum(
        v * (STANDARD_CLASSES[c].latent // p.patch_size) ** 2
        for c, v in zip(CLASS_ORDER, counts)
    )
    return np.array(counts + [n_res, patches], dtype=np.float64)


def count_combinations(max_batch: int, n_classes: int) -> int:
    """Number of nonempty batch compositions with at most `max_batch` requests.

    Compositions of size i over n classes are multisets: C(i + n - 1, n - 1);
    summing i = 1..max_batch counts every admissible batch exactly once.
    """
    if max_batch < 1 or n_classes < 1:
        raise InputError("max_batch and n_classes must be >= 1")
    return sum(math.comb(i + n_classes - 1, n_classes - 1) for i in range(1, max_batch + 1))


def all_compositions(max_batch: int):
    """Every {low, med, high} composition with 1..max_batch requests."""
    out = []
    for total in range(1, max_batch + 1):
        for n_low in range(total + 1):
            for n_med in range(total - n_low + 1):
                out.append({"low": n_low, "med": n_med, "high": total - n_low - n_med})
    return out


def generate_dataset(n: int, seed: int, max_batch: int = 12,
                     p: CostModelParams = DEFAULT_COST):
    """Sample `n` distinct compositions; returns (X, y, comps) with analytic targets."""
    comps = all_compositions(max_batch)
    if n > len(comps):
        raise InputError(f"only {len(comps)} distinct compositions exist, asked for {n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(comps), size=n, replace=False)
    chosen = [comps[i] for i in idx]
    x = np.stack([composition_features(c, p) for c in chosen])
    y = np.array([step_latency(c, p) for c in chosen])
    return x, y, chosen


# --------------------------------------------------------------- predictor


@dataclass
class MlpConfig:
    hidden: tuple = (32, 32)
    lr: float = 1e-2
    epochs: int = 6000
    seed: int = 0


class MlpPredictor:
    """Tiny fully connected net trained on log-latency with Adam, full batch.

    Inputs are standardized with training-set statistics stored on the model,
    so a saved predictor reproduces its predictions exactly after reload.
    """

    def __init__(self, cfg: MlpConfig | None = None,
                 cost_params: CostModelParams = DEFAULT_COST):
        self.cfg = cfg or MlpConfig()
        self.cost_params = cost_params
        self.weights: list = []
        self.biases: list = []
        self.x_mean = None
        self.x_std = None
        self.loss_history: list = []

    def _init_net(self, d_in: int):
        rng = np.random.default_rng(self.cfg.seed)
        dims = [d_in, *self.cfg.hidden, 1]
        self.weights = [
            rng.normal(size=(a, b)) * np.sqrt(2.0 / a) for a, b in zip(dims, dims[1:])
        ]
        self.biases = [np.zeros(b) for b in dims[1:]]

    def _forward(self, x):
        acts = [x]
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return acts

    def train(self, x: np.ndarray, y: np.ndarray) -> float:
        """Fit log(y) from standardized x; returns the final training loss."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 2 or len(x) != len(y):
            raise InputError("bad training data shapes")
        if np.any(y <= 0):
            raise InputError("latencies must be positive")
        self.x_mean = x.mean(axis=0)
        self.x_std = np.maximum(x.std(axis=0), 1e-8)
        xn = (x - self.x_mean) / self.x_std
        t = np.log(y)[:, None]
        self._init_net(x.shape[1])
        ms = [np.zeros_like(w) for w in self.weights] + [np.zeros_like(b) for b in self.biases]
        vs = [np.zeros_like(m) for m in ms]
        b1, b2, eps = 0.9, 0.999, 1e-8
        loss = np.inf
        self.loss_history = []
        for epoch in range(1, self.cfg.epochs + 1):
            acts = self._forward(xn)
            err = acts[-1] - t
            loss = float(np.mean(err ** 2))
            if not math.isfinite(loss):
                raise TrainingError(
                    f"training diverged at epoch {epoch} (seed={self.cfg.seed}, "
                    f"lr={self.cfg.lr}, hidden={self.cfg.hidden})"
                )
            if epoch % 100 == 0 or epoch == 1:
                self.loss_history.append(loss)
            grad = 2.0 * err / len(xn)
            gws, gbs = [], []
            for i in range(len(self.weights) - 1, -1, -1):
                gws.append(acts[i].T @ grad)
                gbs.append(grad.sum(axis=0))
                if i > 0:
                    grad = (grad @ self.weights[i].T) * (acts[i] > 0)
            gws.reverse()
            gbs.reverse()
            params = self.weights + self.biases
            grads = gws + gbs
            for j, (prm, g) in enumerate(zip(params, grads)):
                ms[j] = b1 * ms[j] + (1 - b1) * g
                vs[j] = b2 * vs[j] + (1 - b2) * g * g
                mh = ms[j] / (1 - b1 ** epoch)
                vh = vs[j] / (1 - b2 ** epoch)
                prm -= self.cfg.lr * mh / (np.sqrt(vh) + eps)
        return loss

    def predict(self, x: np.ndarray) -> np.ndarray:
        if not self.weights:
            raise TrainingError("predictor is not trained")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        xn = (x - self.x_mean) / self.x_std
        return np.exp(self._forward(xn)[-1][:, 0])

    def predict_step_latency(self, comp: dict) -> float:
        return float(self.predict(composition_features(comp, self.cost_params)[None])[0])

    def save(self, path) -> None:
        blob = {
            "hidden": list(self.cfg.hidden),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
        }
        with open(path, "w") as f:
            json.dump(blob, f)

    @classmethod
    def load(cls, path, cost_params: CostModelParams = DEFAULT_COST) -> "MlpPredictor":
        with open(path) as f:
            blob = json.load(f)
        m = cls(MlpConfig(hidden=tuple(blob["hidden"])), cost_params)
        m.weights = [np.asarray(w) for w in blob["weights"]]
        m.biases = [np.asarray(b) for b in blob["biases"]]
        m.x_mean = np.asarray(blob["x_mean"])
        m.x_std = np.asarray(blob["x_std"])
        return m


class AnalyticPredictor:
    """Exact cost-model predictor; the scheduler's default."""

    def __init__(self, p: CostModelParams = DEFAULT_COST):
        self.cost_params = p

    def predict_step_latency(self, comp: dict) -> float:
        return step_latency(comp, self.cost_params)


def mean_relative_error(pred: np.ndarray, true: np.ndarray) -> float:
    pred, true = np.asarray(pred), np.asarray(true)
    return float(np.mean(np.abs(pred - true) / np.abs(true)))
