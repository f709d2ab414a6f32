"""The lightweight mask scorer: a two-layer feed-forward network.

Maps a length-L binary mask to a predicted score in (0, 1). Hidden width
is fixed at twice the input width, CELU activation, sigmoid output.
Training is plain SGD with classical momentum and an explicit, hand-rolled
backward pass (verified against finite differences by gradient_check).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import expit

from .core import Mask, MaskScoreRecord, masks_to_rows

__all__ = [
    "SurrogateModel",
    "TrainConfig",
    "CheckpointError",
    "train",
    "lr_for_epoch",
    "gradient_check",
    "r_squared",
    "save_checkpoint",
    "load_checkpoint",
]

# Open-interval guards for the sigmoid output.
_P_LO = 1e-300
_P_HI = float(np.nextafter(1.0, 0.0))

INIT_SCHEME = "glorot-uniform, zero biases"


class CheckpointError(ValueError):
    """Unreadable or dimensionally inconsistent checkpoint file."""


def _celu(x: np.ndarray, alpha: float) -> np.ndarray:
    neg = np.minimum(x, 0.0)
    return np.maximum(x, 0.0) + alpha * (np.exp(neg / alpha) - 1.0)


def _celu_grad(x: np.ndarray, alpha: float) -> np.ndarray:
    # Derivative from the right at the origin; CELU with alpha=1 is C^1,
    # so both one-sided limits agree there anyway.
    return np.where(x >= 0.0, 1.0, np.exp(np.minimum(x, 0.0) / alpha))


class SurrogateModel:
    """Two-layer scorer f(mask) -> (0, 1) with hidden width 2L."""

    def __init__(self, w1, b1, w2, b2, alpha: float = 1.0, train_meta: dict | None = None):
        self.w1 = np.array(w1, dtype=np.float64)
        self.b1 = np.array(b1, dtype=np.float64)
        self.w2 = np.array(w2, dtype=np.float64).reshape(-1)
        self.b2 = float(b2)
        self.alpha = float(alpha)
        self.train_meta = dict(train_meta or {})
        hidden, inputs = self.w1.shape
        if hidden != 2 * inputs:
            raise CheckpointError(
                f"hidden dim {hidden} must be exactly twice input dim {inputs}"
            )
        if self.b1.shape != (hidden,) or self.w2.shape != (hidden,):
            raise CheckpointError("parameter shapes are inconsistent")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def zeros(cls, input_dim: int) -> "SurrogateModel":
        h = 2 * input_dim
        return cls(np.zeros((h, input_dim)), np.zeros(h), np.zeros(h), 0.0)

    @classmethod
    def random_init(cls, input_dim: int, rng: np.random.Generator) -> "SurrogateModel":
        h = 2 * input_dim
        a1 = math.sqrt(6.0 / (input_dim + h))
        a2 = math.sqrt(6.0 / (h + 1))
        return cls(
            rng.uniform(-a1, a1, size=(h, input_dim)),
            np.zeros(h),
            rng.uniform(-a2, a2, size=h),
            0.0,
        )

    def _forward_cached(self, x: np.ndarray):
        z1 = x @ self.w1.T + self.b1
        h1 = _celu(z1, self.alpha)
        z2 = h1 @ self.w2 + self.b2
        p = np.clip(expit(z2), _P_LO, _P_HI)
        return z1, h1, z2, p

    def forward_rows(self, rows: np.ndarray) -> np.ndarray:
        """Predicted scores for an (n, L) bit matrix."""
        x = np.asarray(rows, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(
                f"expected (n, {self.input_dim}) inputs, got shape {x.shape}"
            )
        return self._forward_cached(x)[3]

    def forward(self, mask: Mask) -> float:
        if len(mask) != self.input_dim:
            raise ValueError(
                f"mask length {len(mask)} does not match input dim {self.input_dim}"
            )
        return float(self.forward_rows(mask.to_row()[None, :])[0])

    def params(self):
        return [self.w1, self.b1, self.w2]

    def all_finite(self) -> bool:
        return (
            np.all(np.isfinite(self.w1))
            and np.all(np.isfinite(self.b1))
            and np.all(np.isfinite(self.w2))
            and math.isfinite(self.b2)
        )

    def copy(self) -> "SurrogateModel":
        return SurrogateModel(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2,
            alpha=self.alpha, train_meta=dict(self.train_meta),
        )


def _loss_and_grads(model: SurrogateModel, x: np.ndarray, y: np.ndarray):
    """Mean squared error over one batch plus gradients for every parameter."""
    n = len(x)
    z1, h1, _, p = model._forward_cached(x)
    err = p - y
    loss = float(np.mean(err * err))
    dz2 = (2.0 / n) * err * p * (1.0 - p)
    g_w2 = h1.T @ dz2
    g_b2 = float(np.sum(dz2))
    dz1 = np.outer(dz2, model.w2) * _celu_grad(z1, model.alpha)
    g_w1 = dz1.T @ x
    g_b1 = dz1.sum(axis=0)
    return loss, (g_w1, g_b1, g_w2, g_b2)


@dataclass(frozen=True)
class TrainConfig:
    """Surrogate optimization settings. Defaults are the standard recipe:
    SGD + momentum 0.9, lr 0.008 decayed x0.1 every 100 epochs, MSE loss,
    batches of 300, 200 epochs."""

    epochs: int = 200
    batch_size: int = 300
    learning_rate: float = 0.008
    momentum: float = 0.9
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 100
    seed: int = 42
    shuffle: bool = True

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be positive")


def lr_for_epoch(config: TrainConfig, epoch: int) -> float:
    return config.learning_rate * config.lr_decay_factor ** (epoch // config.lr_decay_every)


def train(
    dataset: list[MaskScoreRecord], config: TrainConfig = TrainConfig()
) -> tuple[SurrogateModel, list[float]]:
    """Fit a fresh surrogate to (mask, score) records.

    Returns the trained model and the per-epoch mean squared error. The
    final partial batch trains at its natural size. Deterministic for a
    fixed (dataset order, config).
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    x = masks_to_rows([r.mask for r in dataset]).astype(np.float64)
    y = np.array([r.score for r in dataset], dtype=np.float64)
    if np.any(y < 0.0) or np.any(y > 1.0):
        raise ValueError("scores must lie in [0, 1]")

    rng = np.random.default_rng(config.seed)
    model = SurrogateModel.random_init(x.shape[1], rng)
    velocity = [np.zeros_like(model.w1), np.zeros_like(model.b1),
                np.zeros_like(model.w2), 0.0]

    n = len(x)
    loss_curve: list[float] = []
    for epoch in range(config.epochs):
        lr = lr_for_epoch(config, epoch)
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        sse = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = _loss_and_grads(model, x[idx], y[idx])
            sse += loss * len(idx)
            g_w1, g_b1, g_w2, g_b2 = grads
            velocity[0] = config.momentum * velocity[0] - lr * g_w1
            velocity[1] = config.momentum * velocity[1] - lr * g_b1
            velocity[2] = config.momentum * velocity[2] - lr * g_w2
            velocity[3] = config.momentum * velocity[3] - lr * g_b2
            model.w1 += velocity[0]
            model.b1 += velocity[1]
            model.w2 += velocity[2]
            model.b2 += velocity[3]
            if not model.all_finite():
                raise FloatingPointError(
                    f"non-finite parameter after update at epoch {epoch}"
                )
        loss_curve.append(sse / n)

    model.train_meta = {
        **asdict(config),
        "init": INIT_SCHEME,
        "rng": "pcg64",
        "final_loss": loss_curve[-1],
        "dataset_size": n,
    }
    return model, loss_curve


def gradient_check(
    model: SurrogateModel, record: MaskScoreRecord, epsilon: float = 1e-5
) -> float:
    """Max relative error between analytic gradients and central finite
    differences of the single-record squared error, over every parameter.

    Relative error uses max(|analytic|, |numeric|) as denominator; below
    1e-6 the comparison falls back to absolute difference.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    x = record.mask.to_row()[None, :]
    y = np.array([record.score])

    def loss_at() -> float:
        p = model.forward_rows(x)[0]
        return float((p - y[0]) ** 2)

    _, grads = _loss_and_grads(model, x, y)
    analytic = [grads[0], grads[1], grads[2], np.array([grads[3]])]
    arrays = [model.w1, model.b1, model.w2, None]

    worst = 0.0
    for arr, grad in zip(arrays, analytic):
        flat_grad = np.asarray(grad).ravel()
        size = 1 if arr is None else arr.size
        for idx in range(size):
            if arr is None:
                saved = model.b2
                model.b2 = saved + epsilon
                up = loss_at()
                model.b2 = saved - epsilon
                down = loss_at()
                model.b2 = saved
            else:
                saved = arr.flat[idx]
                arr.flat[idx] = saved + epsilon
                up = loss_at()
                arr.flat[idx] = saved - epsilon
                down = loss_at()
                arr.flat[idx] = saved
            numeric = (up - down) / (2.0 * epsilon)
            a = float(flat_grad[idx])
            denom = max(abs(a), abs(numeric))
            err = abs(a - numeric) if denom < 1e-6 else abs(a - numeric) / denom
            worst = max(worst, err)
    return worst


def r_squared(model: SurrogateModel, test_set: list[MaskScoreRecord]) -> float:
    """Coefficient of determination of predictions vs true scores.

    Can be negative for predictors worse than the test-set mean.
    """
    if not test_set:
        raise ValueError("cannot score an empty test set")
    x = masks_to_rows([r.mask for r in test_set])
    y = np.array([r.score for r in test_set], dtype=np.float64)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("test scores have zero variance, R^2 undefined")
    pred = model.forward_rows(x)
    ss_res = float(np.sum((y - pred) ** 2))
    return 1.0 - ss_res / ss_tot


def save_checkpoint(model: SurrogateModel, path) -> None:
    """Serialize all parameters in full decimal precision (round-trip exact)."""
    obj = {
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "activation": "celu",
        "alpha": model.alpha,
        "W1": model.w1.tolist(),
        "b1": model.b1.tolist(),
        "W2": [model.w2.tolist()],
        "b2": model.b2,
        "train_meta": model.train_meta,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_checkpoint(path) -> SurrogateModel:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint: {exc}") from exc
    try:
        if obj.get("activation", "celu") != "celu":
            raise CheckpointError(f"unsupported activation {obj['activation']!r}")
        w2 = np.array(obj["W2"], dtype=np.float64).reshape(-1)
        model = SurrogateModel(
            obj["W1"], obj["b1"], w2, obj["b2"],
            alpha=float(obj.get("alpha", 1.0)),
            train_meta=obj.get("train_meta"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed checkpoint: {exc}") from exc
    if model.input_dim != int(obj["input_dim"]) or model.hidden_dim != int(obj["hidden_dim"]):
        raise CheckpointError(f"{path}: declared dims disagree with parameter shapes")
    return model
