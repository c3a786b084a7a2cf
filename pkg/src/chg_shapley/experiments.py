"""Synthetic tasks, label-noise injection, and the evaluation curves.

Covers the two standard protocols for judging a valuation: how fast the
lowest-valued fraction uncovers injected label noise, and how retraining
accuracy moves as data is deleted in value order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .models import Dataset, LearningRateSchedule, init_model, sgd_step_weighted, accuracy

REMOVAL_ORDERS = ("lowest_first", "highest_first", "random")


@dataclass(frozen=True)
class NoiseSpec:
    """Ground truth of an injection: rate, seed, and the flipped-point mask."""

    rate: float
    seed: int
    flip_mask: np.ndarray  # bool, length n


@dataclass
class DetectionReport:
    """Noisy-point recall among the lowest-valued fraction, swept over fractions."""

    fractions: np.ndarray
    detection_rate: np.ndarray
    auc: float
    random_baseline: np.ndarray


@dataclass(frozen=True)
class RemovalConfig:
    fractions: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    epochs: int = 20
    lr: float = 0.1
    seed: int = 0
    threads: int = 1


@dataclass
class RemovalCurve:
    """Retrained test accuracy per removal fraction, for each removal order."""

    fractions: np.ndarray
    accuracy: dict[str, np.ndarray]  # order -> accuracies


@dataclass(frozen=True)
class DescentBoundCheck:
    lhs: float
    rhs: float
    holds: bool


def make_synthetic_dataset(
    n: int, p: int, n_classes: int, separation: float, seed: int
) -> Dataset:
    """Class-conditional unit Gaussians with means `separation` apart.

    Class c's mean sits at (separation / sqrt(2)) * e_c, so every pair of
    means is exactly `separation` apart; classes are balanced up to the
    remainder and rows are shuffled deterministically.
    """
    if n_classes < 2 or n < n_classes:
        raise ValueError(f"need n >= n_classes >= 2, got n={n}, n_classes={n_classes}")
    if p < n_classes:
        raise ValueError(f"need p >= n_classes for the mean layout, got p={p}")
    if separation < 0:
        raise ValueError(f"separation must be >= 0, got {separation}")
    rng = np.random.default_rng(seed)
    counts = [n // n_classes + (1 if c < n % n_classes else 0) for c in range(n_classes)]
    labels = np.repeat(np.arange(n_classes), counts)
    means = np.zeros((n_classes, p))
    means[np.arange(n_classes), np.arange(n_classes)] = separation / math.sqrt(2.0)
    features = means[labels] + rng.standard_normal((n, p))
    order = rng.permutation(n)
    return Dataset(features=features[order], labels=labels[order], n_classes=n_classes)


def inject_label_noise(
    labels, rate: float, seed: int, n_classes: int | None = None
) -> tuple[np.ndarray, NoiseSpec]:
    """Flip exactly round(rate * n) uniformly chosen labels to different classes."""
    labels = np.asarray(labels, dtype=np.intp)
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    n = labels.size
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    count = int(round(rate * n))
    if count > 0 and n_classes < 2:
        raise ValueError("cannot flip labels with fewer than two classes")
    rng = np.random.default_rng(seed)
    mask = np.zeros(n, dtype=bool)
    flipped = labels.copy()
    if count > 0:
        chosen = rng.choice(n, size=count, replace=False)
        mask[chosen] = True
        draws = rng.integers(0, n_classes - 1, size=count)
        flipped[chosen] = draws + (draws >= labels[chosen])
    return flipped, NoiseSpec(rate=rate, seed=seed, flip_mask=mask)


def detection_curve(values, noise: NoiseSpec, grid=None) -> DetectionReport:
    """Sweep the inspected fraction over the ascending-value order.

    At fraction q the detection rate is the share of noisy points among
    the round(q*n) lowest-valued data.  The grid is augmented with the
    0 and 1 endpoints, where the curve is pinned to 0 and 1.
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(noise.flip_mask, dtype=bool)
    if values.shape != mask.shape:
        raise ValueError("values and noise mask must align")
    total = int(mask.sum())
    if total == 0:
        raise ValueError("no noisy points to detect")
    n = values.size
    if grid is None:
        grid = np.linspace(0.0, 1.0, 101)
    fractions = np.unique(np.concatenate([[0.0, 1.0], np.asarray(grid, dtype=float)]))
    if fractions.min() < 0 or fractions.max() > 1:
        raise ValueError("grid fractions must lie in [0, 1]")
    order = np.lexsort((np.arange(n), values))  # ascending value, ties by index
    found = np.concatenate([[0], np.cumsum(mask[order])])
    inspected = np.round(fractions * n).astype(int)
    rate = found[inspected] / total
    auc = float(np.trapezoid(rate, fractions))
    return DetectionReport(
        fractions=fractions,
        detection_rate=rate,
        auc=auc,
        random_baseline=fractions.copy(),
    )


def _retrain_accuracy(
    retained: np.ndarray, train: Dataset, test: Dataset, cfg: RemovalConfig
) -> float:
    schedule = LearningRateSchedule(base_lr=cfg.lr, total_epochs=cfg.epochs)
    model = init_model((train.n_features, train.n_classes), seed=cfg.seed, schedule=schedule)
    weights = np.ones(retained.size)
    for epoch in range(cfg.epochs):
        model = sgd_step_weighted(model, train, retained, weights, schedule.at(epoch))
    return accuracy(model, test)


def point_removal_curve(
    values, train: Dataset, test: Dataset, cfg: RemovalConfig
) -> RemovalCurve:
    """Retrain-from-scratch accuracy as data is deleted in value order.

    Every arm reuses the same init seed, so curves differ only through
    the retained set.  Fractions that would empty the training set are
    dropped.  Arms run on `cfg.threads` workers and are combined in a
    fixed order, so the thread count never changes the result.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (train.n,):
        raise ValueError("values must align with the training data")
    n = train.n
    ascending = np.lexsort((np.arange(n), values))
    orders = {
        "lowest_first": ascending,
        "highest_first": np.lexsort((np.arange(n), -values)),
        "random": np.random.default_rng([cfg.seed, 2]).permutation(n),
    }
    fractions = np.array(
        [f for f in cfg.fractions if int(round(f * n)) < n], dtype=float
    )
    jobs = [
        (order_name, fi, np.sort(orders[order_name][int(round(f * n)) :]))
        for order_name in REMOVAL_ORDERS
        for fi, f in enumerate(fractions)
    ]
    results = np.empty((len(REMOVAL_ORDERS), fractions.size))
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            accs = list(
                pool.map(lambda job: _retrain_accuracy(job[2], train, test, cfg), jobs)
            )
    else:
        accs = [_retrain_accuracy(job[2], train, test, cfg) for job in jobs]
    for (order_name, fi, _), acc in zip(jobs, accs):
        results[REMOVAL_ORDERS.index(order_name), fi] = acc
    return RemovalCurve(
        fractions=fractions,
        accuracy={name: results[i] for i, name in enumerate(REMOVAL_ORDERS)},
    )


def descent_bound_check(L: float, theta, x) -> DescentBoundCheck:
    """Equality case of the descent bound on f(theta) = L/2 * ||theta||^2.

    With step 1/L, the quadratic's second-order expansion is exact, so
    f(theta - x/L) equals f(theta) - (1/(2L)) * (||grad||^2 - ||grad - x||^2)
    up to float roundoff.
    """
    if L <= 0:
        raise ValueError(f"need L > 0, got {L}")
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    eta = 1.0 / L
    moved = theta - eta * x
    lhs = 0.5 * L * float(moved @ moved)
    grad = L * theta
    resid = grad - x
    rhs = 0.5 * L * float(theta @ theta) - 0.5 * eta * (
        float(grad @ grad) - float(resid @ resid)
    )
    holds = abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))
    return DescentBoundCheck(lhs=lhs, rhs=rhs, holds=holds)
