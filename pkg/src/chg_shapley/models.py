"""Linear-softmax models with analytic per-example losses and last-layer gradients.

The model is a softmax head on the raw features or on a frozen random
feature map, so per-example gradients are exact closed-form expressions
and one flattened gradient row costs O(classes * width).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np


class NonFiniteBatchError(FloatingPointError):
    """A per-example forward pass produced a non-finite value."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


@dataclass
class Dataset:
    """Feature matrix with integer class labels and per-class index lists."""

    features: np.ndarray  # n x p
    labels: np.ndarray  # n ints in [0, n_classes)
    n_classes: int | None = None
    class_index: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.features.ndim != 2:
            raise ValueError(f"features must be n x p, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must align with feature rows")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite features")
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("labels must be non-negative")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        if self.labels.size and self.labels.max() >= self.n_classes:
            raise ValueError(
                f"label {int(self.labels.max())} outside [0, {self.n_classes})"
            )
        self.class_index = tuple(
            np.flatnonzero(self.labels == c) for c in range(self.n_classes)
        )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class FrozenFeatureMap:
    """Fixed random tanh features; drawn once from a seed, never trained."""

    projection: np.ndarray  # p x width
    offset: np.ndarray  # width

    def apply(self, features: np.ndarray) -> np.ndarray:
        return np.tanh(features @ self.projection + self.offset)

    @property
    def width(self) -> int:
        return self.projection.shape[1]


def make_feature_map(n_features: int, width: int, seed: int) -> FrozenFeatureMap:
    rng = np.random.default_rng([seed, 1])
    projection = rng.standard_normal((n_features, width)) / math.sqrt(n_features)
    offset = rng.uniform(-1.0, 1.0, width)
    return FrozenFeatureMap(projection=projection, offset=offset)


@dataclass(frozen=True)
class LearningRateSchedule:
    """Constant or cosine-decayed step size over a fixed epoch budget."""

    base_lr: float = 0.1
    kind: str = "constant"  # constant | cosine
    total_epochs: int = 0

    def at(self, epoch: int) -> float:
        if self.kind == "constant":
            return self.base_lr
        if self.kind == "cosine":
            horizon = max(1, self.total_epochs)
            return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / horizon))
        raise ValueError(f"unknown schedule kind {self.kind!r}")


@dataclass
class ModelState:
    """Softmax-head parameters plus step count and schedule descriptor."""

    weights: np.ndarray  # n_classes x width
    bias: np.ndarray  # n_classes
    step: int = 0
    schedule: LearningRateSchedule = field(default_factory=LearningRateSchedule)
    feature_map: FrozenFeatureMap | None = None

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    @property
    def n_parameters(self) -> int:
        return self.weights.size + self.bias.size

    @property
    def grad_dim(self) -> int:
        """Length of one flattened last-layer gradient row."""
        return self.n_parameters


@dataclass
class PerExampleBatchResult:
    """Per-example cross-entropy losses and flattened last-layer gradients."""

    losses: np.ndarray  # m
    last_layer_grads: np.ndarray  # m x (n_classes * width + n_classes)


def init_model(
    dataset_shape: tuple[int, int],
    seed: int,
    hidden_width: int | None = None,
    schedule: LearningRateSchedule | None = None,
) -> ModelState:
    """Deterministic init: small uniform weights, zero bias.

    `dataset_shape` is (n_features, n_classes).  With `hidden_width` set,
    the head sits on a frozen random feature map of that width.
    """
    n_features, n_classes = dataset_shape
    if n_features < 1 or n_classes < 1:
        raise ValueError(f"bad dataset shape {dataset_shape}")
    feature_map = None
    width = n_features
    if hidden_width is not None:
        if hidden_width < 1:
            raise ValueError(f"hidden_width must be positive, got {hidden_width}")
        feature_map = make_feature_map(n_features, hidden_width, seed)
        width = hidden_width
    rng = np.random.default_rng([seed, 0])
    weights = rng.uniform(-0.01, 0.01, size=(n_classes, width))
    bias = np.zeros(n_classes)
    return ModelState(
        weights=weights,
        bias=bias,
        step=0,
        schedule=schedule or LearningRateSchedule(),
        feature_map=feature_map,
    )


def _head_inputs(model: ModelState, data: Dataset, indices) -> tuple[np.ndarray, np.ndarray]:
    if indices is None:
        idx = np.arange(data.n, dtype=np.intp)
    else:
        idx = np.asarray(indices, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= data.n):
            raise ValueError(f"indices out of range for n={data.n}")
    phi = data.features[idx]
    if model.feature_map is not None:
        phi = model.feature_map.apply(phi)
    return idx, phi


def _probs_and_losses(
    model: ModelState, phi: np.ndarray, labels: np.ndarray, idx: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    logits = phi @ model.weights.T + model.bias
    if not np.all(np.isfinite(logits)):
        bad = int(idx[np.flatnonzero(~np.all(np.isfinite(logits), axis=1))[0]])
        raise NonFiniteBatchError(f"non-finite logits at example {bad}", index=bad)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(labels.size)
    losses = log_z - shifted[rows, labels]
    probs = np.exp(shifted - log_z[:, None])
    return probs, losses


def per_example_loss_and_grad(
    model: ModelState, data: Dataset, indices=None
) -> PerExampleBatchResult:
    """Softmax cross-entropy loss and exact last-layer gradient per example.

    Row i flattens the weight gradient (softmax(z_i) - onehot(y_i)) outer
    phi_i row-major by class, followed by the bias gradient.  Example i's
    row depends only on example i and the current parameters.
    """
    idx, phi = _head_inputs(model, data, indices)
    labels = data.labels[idx]
    probs, losses = _probs_and_losses(model, phi, labels, idx)
    delta = probs.copy()
    delta[np.arange(labels.size), labels] -= 1.0
    weight_grads = np.einsum("ic,iq->icq", delta, phi).reshape(idx.size, -1)
    grads = np.concatenate([weight_grads, delta], axis=1)
    return PerExampleBatchResult(losses=losses, last_layer_grads=grads)


def batch_loss(model: ModelState, data: Dataset, indices=None) -> float:
    """Mean cross-entropy over the batch."""
    idx, phi = _head_inputs(model, data, indices)
    _, losses = _probs_and_losses(model, phi, data.labels[idx], idx)
    return float(losses.mean())


def accuracy(model: ModelState, data: Dataset, indices=None) -> float:
    idx, phi = _head_inputs(model, data, indices)
    logits = phi @ model.weights.T + model.bias
    return float(np.mean(logits.argmax(axis=1) == data.labels[idx]))


def sgd_step_weighted(
    model: ModelState, data: Dataset, indices, weights, lr: float
) -> ModelState:
    """One step theta <- theta - lr * (1/|batch|) sum_i w_i grad_i.

    Returns a new state; the input model is untouched.
    """
    idx, phi = _head_inputs(model, data, indices)
    w = np.asarray(weights, dtype=float)
    if w.shape != (idx.size,):
        raise ValueError(f"weights shape {w.shape} does not match batch size {idx.size}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    labels = data.labels[idx]
    probs, _ = _probs_and_losses(model, phi, labels, idx)
    delta = probs
    delta[np.arange(labels.size), labels] -= 1.0
    delta *= w[:, None]
    grad_w = delta.T @ phi / idx.size
    grad_b = delta.sum(axis=0) / idx.size
    return replace(
        model,
        weights=model.weights - lr * grad_w,
        bias=model.bias - lr * grad_b,
        step=model.step + 1,
    )


def softmax_gradient_lipschitz_bound(model: ModelState, data: Dataset, indices=None) -> float:
    """A gradient-Lipschitz constant of the batch-mean cross-entropy.

    The softmax Hessian in logit space is bounded by I/2, so
    L = mean_i ||[phi_i, 1]||^2 / 2 works for the flattened head params.
    """
    idx, phi = _head_inputs(model, data, indices)
    return float(0.5 * np.mean(np.einsum("iq,iq->i", phi, phi) + 1.0))


# ---------------------------------------------------------------------------
# CSV ingestion: header row, feature columns, then one integer label column
# ---------------------------------------------------------------------------

def load_dataset_csv(path) -> Dataset:
    """Read `feature..., label` rows; labels must cover 0..C-1 with no gaps."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) < 2:
            raise ValueError(f"{path}: need a header with >= 1 feature column plus label")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    features = np.array([[float(tok) for tok in row[:-1]] for row in rows])
    labels = np.array([int(row[-1]) for row in rows], dtype=np.intp)
    present = np.unique(labels)
    expected = np.arange(labels.max() + 1)
    if labels.min() < 0 or present.size != expected.size or np.any(present != expected):
        raise ValueError(
            f"{path}: labels must be contiguous 0..C-1, found {present.tolist()}"
        )
    return Dataset(features=features, labels=labels)


def save_dataset_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"feat_{j}" for j in range(data.n_features)] + ["label"])
        for row, label in zip(data.features, data.labels):
            writer.writerow([f"{v:.17g}" for v in row] + [int(label)])
