"""Mini-batch training, optimizers and the finite-difference gradient check."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..augment import AugmentPolicy, sample_spec, warp
from .model import Model, NetworkConfig
from .ops import softmax_cross_entropy

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    l2_lambda: float = 1e-4
    optimizer: str = "adam"  # "adam" or "sgd" (momentum 0.9)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0 or self.l2_lambda < 0:
            raise ValueError("learning_rate and l2_lambda must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class SGDMomentum:
    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr, self.momentum = lr, momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        for k in params:
            v = self.velocity.get(k)
            v = -self.lr * grads[k] if v is None else self.momentum * v - self.lr * grads[k]
            self.velocity[k] = v
            params[k] += v


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in params:
            g = grads[k]
            m = self.beta1 * self.m.get(k, 0.0) + (1.0 - self.beta1) * g
            v = self.beta2 * self.v.get(k, 0.0) + (1.0 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(tc: TrainConfig):
    return Adam(tc.learning_rate) if tc.optimizer == "adam" else SGDMomentum(tc.learning_rate)


@dataclass
class History:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.loss)


def _augment_batch(x: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    out = x.copy()
    for i in range(x.shape[0]):
        # untouched samples keep the sensor noise that resampling would smooth away
        if policy.apply_prob < 1.0 and rng.random() >= policy.apply_prob:
            continue
        spec = sample_spec(policy, rng)
        out[i] = warp(x[i].transpose(1, 2, 0), spec).transpose(2, 0, 1)
    return out


def train(
    features,
    labels,
    net: NetworkConfig,
    tc: TrainConfig = TrainConfig(),
    augment_policy: AugmentPolicy | None = None,
    model: Model | None = None,
) -> tuple[Model, History]:
    """Fit ``net`` on ``(features, labels)``.

    A fresh model standardizes inputs with the global mean and standard
    deviation of ``features``.  The seed fans out to independent streams for
    initialization, batch order and dropout; augmentation draws from ``augment_policy.seed``.
    Epoch loss is the sample-weighted mean of the batch losses, each
    including the L2 term; epoch accuracy is measured on the training-mode
    batch outputs.
    """
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size and (labels.min() < 0 or labels.max() >= net.num_classes):
        raise ValueError(f"labels must lie in 0..{net.num_classes - 1}")
    if model is None:
        model = Model.initialize(net, seed=np.random.SeedSequence([tc.seed, 0]).generate_state(1)[0])
        raw = np.asarray(features, dtype=np.float64)
        if raw.size:
            std = float(raw.std())
            model.input_mean, model.input_std = float(raw.mean()), std if std > 0 else 1.0
    x_all = model.to_nchw(features)
    n = x_all.shape[0]
    if n != labels.size:
        raise ValueError(f"{n} feature rows vs {labels.size} labels")

    order_rng = np.random.default_rng([tc.seed, 1])
    drop_rng = np.random.default_rng([tc.seed, 2])
    aug_rng = augment_policy.generator() if augment_policy is not None else None
    opt = make_optimizer(tc)
    history = History()

    for epoch in range(tc.epochs):
        perm = order_rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for start in range(0, n, tc.batch_size):
            idx = perm[start : start + tc.batch_size]
            xb = x_all[idx]
            if aug_rng is not None:
                xb = _augment_batch(xb, augment_policy, aug_rng)
            loss, grads, logits = model.loss_and_grads(
                xb, labels[idx], l2=tc.l2_lambda, train=True, rng=drop_rng
            )
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch + 1}, batch starting at {start}; "
                    f"try a lower learning rate (currently {tc.learning_rate})"
                )
            opt.step(model.params, grads)
            loss_sum += loss * idx.size
            correct += int(np.sum(logits.argmax(axis=1) == labels[idx]))
        history.loss.append(loss_sum / n)
        history.accuracy.append(correct / n)
        log.info("epoch %d/%d loss=%.6f acc=%.4f", epoch + 1, tc.epochs, history.loss[-1], history.accuracy[-1])
    return model, history


def predict(model: Model, features, batch_size: int = 256) -> np.ndarray:
    return model.predict(features, batch_size=batch_size)


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients sane."""
    a, b = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(
    net: NetworkConfig | Model,
    x,
    label: int,
    eps: float = 1e-5,
    l2: float = 0.0,
    seed: int = 0,
    dropout_seed: int = 1,
    max_per_param: int | None = None,
) -> float:
    """Max relative error between backprop and central differences.

    Dropout layers run in training mode with a fixed mask so the checked
    function is deterministic.  Every parameter is checked unless
    ``max_per_param`` is set, in which case that many coordinates per tensor
    are drawn (seeded by ``seed``).
    """
    model = net.copy() if isinstance(net, Model) else Model.initialize(net, seed)
    xb = model.to_nchw(np.asarray(x, dtype=np.float64).reshape(1, -1) if np.ndim(x) != 4 else x)
    y = np.array([label])

    def loss_at():
        logits = model.forward(xb, train=True, rng=np.random.default_rng(dropout_seed))
        loss, _ = softmax_cross_entropy(logits, y)
        return loss + l2 * model.l2_penalty() if l2 else loss

    _, grads, _ = model.loss_and_grads(xb, y, l2=l2, train=True, rng=np.random.default_rng(dropout_seed))
    pick = np.random.default_rng([seed, 3])
    worst = 0.0
    for key, p in model.params.items():
        flat = p.reshape(-1)
        coords = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            coords = np.sort(pick.choice(flat.size, max_per_param, replace=False))
        numeric = np.empty(coords.size)
        for n, j in enumerate(coords):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_at()
            flat[j] = orig - eps
            down = loss_at()
            flat[j] = orig
            numeric[n] = (up - down) / (2 * eps)
        if coords.size:
            worst = max(worst, float(relative_error(grads[key].reshape(-1)[coords], numeric).max()))
    return worst
