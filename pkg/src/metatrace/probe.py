"""Linear-probe metadata-label prediction.

Protocol: random hyperparameter search (learning rate, weight decay) over a
fixed trial budget, each trial trained by mini-batch gradient descent with
momentum on multinomial cross-entropy using a held-out validation fraction;
the best trial's hyperparameters are then used to retrain on the full
training set. Fully deterministic per (data, config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from metatrace.seeding import derive_rng


class ProbeError(ValueError):
    """Raised on invalid probe inputs or diverged training."""


@dataclass(frozen=True)
class ProbeConfig:
    trials: int = 30
    lr_range: tuple[float, float] = (1e-4, 1e-1)
    wd_range: tuple[float, float] = (1e-6, 1e-2)
    wd_zero_prob: float = 0.2  # chance a trial draws weight decay exactly 0
    epochs: int = 100
    batch_size: int = 256
    val_fraction: float = 0.2
    momentum: float = 0.9
    normalize_inputs: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ProbeError("trials must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ProbeError("val_fraction must be in (0, 1)")


@dataclass(frozen=True)
class TrialResult:
    index: int
    lr: float
    wd: float
    val_accuracy: float


@dataclass(frozen=True)
class ProbeModel:
    """Linear classifier W (M x d) + bias, with training provenance."""

    W: np.ndarray
    b: np.ndarray
    chosen_lr: float
    chosen_wd: float
    seed: int
    normalize_inputs: bool
    trial_log: tuple[TrialResult, ...] = field(default=())
    final_val_accuracy: float = float("nan")

    def __post_init__(self):
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ProbeError("model parameters must be finite")

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = _prepare(X, self.normalize_inputs)
        return np.argmax(X @ self.W.T + self.b, axis=1)


def _prepare(X: np.ndarray, normalize: bool) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if normalize:
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        X = X / norms
    return X


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sgd_train(
    X: np.ndarray,
    y: np.ndarray,
    M: int,
    lr: float,
    wd: float,
    cfg: ProbeConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Mini-batch gradient descent with momentum and cosine lr decay."""
    n, d = X.shape
    W = np.zeros((M, d))
    b = np.zeros(M)
    vW = np.zeros_like(W)
    vb = np.zeros_like(b)
    onehot = np.eye(M)[y]
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            Xb, Yb = X[batch], onehot[batch]
            probs = _softmax_rows(Xb @ W.T + b)
            err = probs - Yb  # batch x M
            gW = err.T @ Xb / len(batch) + wd * W
            gb = err.mean(axis=0)
            cur_lr = lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
            vW = cfg.momentum * vW - cur_lr * gW
            vb = cfg.momentum * vb - cur_lr * gb
            W = W + vW
            b = b + vb
            step += 1
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ProbeError(
                    f"training diverged to NaN/Inf (lr={lr:g}, wd={wd:g})"
                )
    return W, b


def _accuracy(W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(X @ W.T + b, axis=1) == y))


def train_probe(
    embeddings: np.ndarray, classes: np.ndarray, cfg: ProbeConfig
) -> ProbeModel:
    """Hyperparameter search on a validation split, then retrain on all data."""
    X = _prepare(embeddings, cfg.normalize_inputs)
    y = np.asarray(classes, dtype=np.int64)
    if X.shape[0] != y.shape[0]:
        raise ProbeError(f"{X.shape[0]} embeddings but {y.shape[0]} labels")
    present = np.unique(y)
    if present.size < 2:
        raise ProbeError("training data must contain at least 2 classes")
    M = int(y.max()) + 1
    if X.shape[0] < M:
        raise ProbeError(f"need at least {M} samples for {M} classes")

    split_rng = derive_rng(cfg.seed, "probe-valsplit")
    order = split_rng.permutation(X.shape[0])
    n_val = max(1, int(round(cfg.val_fraction * X.shape[0])))
    val_idx, fit_idx = order[:n_val], order[n_val:]
    X_fit, y_fit = X[fit_idx], y[fit_idx]
    X_val, y_val = X[val_idx], y[val_idx]
    if np.unique(y_fit).size < 2:
        raise ProbeError("validation split left fewer than 2 classes in training")

    hp_rng = derive_rng(cfg.seed, "probe-hp")
    trials: list[TrialResult] = []
    for t in range(cfg.trials):
        lr = float(np.exp(hp_rng.uniform(np.log(cfg.lr_range[0]), np.log(cfg.lr_range[1]))))
        zero_wd = bool(hp_rng.uniform() < cfg.wd_zero_prob)
        wd = 0.0 if zero_wd else float(
            np.exp(hp_rng.uniform(np.log(cfg.wd_range[0]), np.log(cfg.wd_range[1])))
        )
        trial_rng = derive_rng(cfg.seed, "probe-trial", t)
        W, b = _sgd_train(X_fit, y_fit, M, lr, wd, cfg, trial_rng)
        trials.append(TrialResult(index=t, lr=lr, wd=wd, val_accuracy=_accuracy(W, b, X_val, y_val)))

    best = max(trials, key=lambda t: (t.val_accuracy, -t.index))
    final_rng = derive_rng(cfg.seed, "probe-final")
    W, b = _sgd_train(X, y, M, best.lr, best.wd, cfg, final_rng)
    return ProbeModel(
        W=W,
        b=b,
        chosen_lr=best.lr,
        chosen_wd=best.wd,
        seed=cfg.seed,
        normalize_inputs=cfg.normalize_inputs,
        trial_log=tuple(trials),
        final_val_accuracy=_accuracy(W, b, X_val, y_val),
    )


def evaluate_probe(model: ProbeModel, embeddings: np.ndarray, classes: np.ndarray) -> float:
    """Argmax accuracy of the probe on a test set."""
    X = np.asarray(embeddings)
    y = np.asarray(classes, dtype=np.int64)
    if X.shape[0] == 0:
        raise ProbeError("empty test set")
    if X.ndim != 2 or X.shape[1] != model.W.shape[1]:
        raise ProbeError(
            f"dim mismatch: test {X.shape}, model expects d={model.W.shape[1]}"
        )
    return float(np.mean(model.predict(X) == y))


def random_baseline(num_classes: int) -> float:
    """Chance accuracy 1/M for a uniform M-class label."""
    if num_classes < 1:
        raise ProbeError("num_classes must be >= 1")
    return 1.0 / num_classes
