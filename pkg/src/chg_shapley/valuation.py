"""Per-epoch data valuation: score every datum each epoch, then train, then average.

Each epoch acquires full-batch per-example losses and last-layer
gradients at the current parameters, computes closed-form Shapley values
of the chosen utility kind from them, and only then applies the epoch's
parameter update, so values describe the state the gradients were
measured at.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .models import (
    Dataset,
    LearningRateSchedule,
    NonFiniteBatchError,
    init_model,
    per_example_loss_and_grad,
    sgd_step_weighted,
)
from .utilities import GradientSet, gradient_set_values

EFFICIENCY_TOLERANCE = 1e-9


class TrainingDivergedError(FloatingPointError):
    """Training produced non-finite losses; carries the offending epoch."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class EfficiencyAuditError(RuntimeError):
    """Per-epoch value sums drifted from the recorded grand-coalition utility."""

    def __init__(self, message: str, epochs: list[int]):
        super().__init__(message)
        self.epochs = epochs


@dataclass(frozen=True)
class ValuationConfig:
    kind: str = "chg"
    epochs: int = 20
    seed: int = 0
    lr: float = 0.1
    lr_schedule: str = "constant"
    per_class: bool = False
    skip_first_epochs: int = 0
    hidden_width: int | None = None

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"need epochs >= 1, got {self.epochs}")
        if not 0 <= self.skip_first_epochs < self.epochs:
            raise ValueError("skip_first_epochs must be in [0, epochs)")


@dataclass
class ValuationRun:
    """Per-epoch values, their mean, and the recorded per-epoch utilities."""

    per_epoch_values: np.ndarray  # epochs x n
    mean_values: np.ndarray  # n
    per_epoch_utilities: np.ndarray  # epochs, U(N) at valuation time
    config: ValuationConfig
    n_features: int
    n_classes: int

    @property
    def epochs(self) -> int:
        return self.per_epoch_values.shape[0]

    @property
    def n(self) -> int:
        return self.per_epoch_values.shape[1]


@dataclass
class EfficiencyAudit:
    max_violation: float
    per_epoch_violation: np.ndarray
    tolerance: float


def _grand_utility(X: np.ndarray, alpha: np.ndarray) -> float:
    """U(N) = ||alpha||^2 - ||mean(x) - alpha||^2 for the quadratic kinds."""
    diff = X.mean(axis=0) - alpha
    return float(alpha @ alpha - diff @ diff)


def _group_values(gs: GradientSet, kind: str) -> tuple[np.ndarray, float]:
    values = gradient_set_values(gs, kind).values
    if kind == "hardness":
        return values, float(gs.losses.mean())
    X = gs.weighted_vectors() if kind == "chg" else gs.raw_vectors()
    return values, _grand_utility(X, X.mean(axis=0))


def _epoch_values(
    gs: GradientSet, kind: str, per_class: bool, class_index
) -> tuple[np.ndarray, float]:
    if not per_class:
        return _group_values(gs, kind)
    values = np.zeros(gs.n)
    utility = 0.0
    for idx in class_index:
        if idx.size == 0:
            continue
        class_values, class_utility = _group_values(gs.restrict(idx), kind)
        values[idx] = class_values
        utility += class_utility
    return values, utility


def run_valuation(data: Dataset, config: ValuationConfig) -> ValuationRun:
    """One training run with full-batch valuation before each epoch's update."""
    if data.n < 1:
        raise ValueError("dataset is empty")
    schedule = LearningRateSchedule(
        base_lr=config.lr, kind=config.lr_schedule, total_epochs=config.epochs
    )
    model = init_model(
        (data.n_features, data.n_classes),
        seed=config.seed,
        hidden_width=config.hidden_width,
        schedule=schedule,
    )
    per_epoch = np.empty((config.epochs, data.n))
    utilities = np.empty(config.epochs)
    everyone = np.arange(data.n, dtype=np.intp)
    unit_weights = np.ones(data.n)
    for epoch in range(config.epochs):
        try:
            batch = per_example_loss_and_grad(model, data)
        except NonFiniteBatchError as err:
            raise TrainingDivergedError(
                f"training diverged at epoch {epoch}: {err}", epoch=epoch
            ) from err
        gs = GradientSet(batch.last_layer_grads, batch.losses, weighted=False)
        per_epoch[epoch], utilities[epoch] = _epoch_values(
            gs, config.kind, config.per_class, data.class_index
        )
        model = sgd_step_weighted(model, data, everyone, unit_weights, schedule.at(epoch))
    mean_values = per_epoch[config.skip_first_epochs :].mean(axis=0)
    return ValuationRun(
        per_epoch_values=per_epoch,
        mean_values=mean_values,
        per_epoch_utilities=utilities,
        config=config,
        n_features=data.n_features,
        n_classes=data.n_classes,
    )


def epoch_efficiency_audit(
    run: ValuationRun,
    per_epoch_utilities=None,
    tolerance: float = EFFICIENCY_TOLERANCE,
) -> EfficiencyAudit:
    """Check sum_j value_j = U(N) for every epoch, within relative tolerance.

    np.sum's pairwise accumulation keeps the check meaningful at n >= 1e4.
    Raises `EfficiencyAuditError` listing the offending epochs on failure.
    """
    utilities = np.asarray(
        run.per_epoch_utilities if per_epoch_utilities is None else per_epoch_utilities,
        dtype=float,
    )
    if utilities.shape != (run.epochs,):
        raise ValueError("need one recorded utility per epoch")
    sums = run.per_epoch_values.sum(axis=1)
    violation = np.abs(sums - utilities) / np.maximum(1.0, np.abs(utilities))
    worst = float(violation.max())
    if worst > tolerance:
        bad = np.flatnonzero(violation > tolerance).tolist()
        raise EfficiencyAuditError(
            f"efficiency audit failed at epochs {bad}: max violation {worst:.3e}",
            epochs=bad,
        )
    return EfficiencyAudit(
        max_violation=worst, per_epoch_violation=violation, tolerance=tolerance
    )


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def value_ranks(values: np.ndarray) -> np.ndarray:
    """Rank 1 = highest value; ties broken by ascending index."""
    order = np.lexsort((np.arange(values.size), -values))
    ranks = np.empty(values.size, dtype=int)
    ranks[order] = np.arange(1, values.size + 1)
    return ranks


def write_values_csv(path, run: ValuationRun, data: Dataset, noise_mask=None) -> None:
    """Emit index,label[,is_noisy],mean_value,rank with 17-digit floats."""
    ranks = value_ranks(run.mean_values)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["index", "label", "mean_value", "rank"]
        if noise_mask is not None:
            header.insert(2, "is_noisy")
        writer.writerow(header)
        for i in range(run.n):
            row = [i, int(data.labels[i]), f"{run.mean_values[i]:.17g}", int(ranks[i])]
            if noise_mask is not None:
                row.insert(2, int(noise_mask[i]))
            writer.writerow(row)


def load_values_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    columns: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        raw = [row[j] for row in rows]
        if name in ("index", "label", "rank", "is_noisy"):
            columns[name] = np.array([int(tok) for tok in raw], dtype=int)
        else:
            columns[name] = np.array([float(tok) for tok in raw])
    return columns


def write_run_meta(path, run: ValuationRun, seconds: float, extra: dict | None = None) -> None:
    meta = {
        "version": __version__,
        "config": asdict(run.config),
        "n": run.n,
        "n_features": run.n_features,
        "n_classes": run.n_classes,
        "per_epoch_utility": [float(u) for u in run.per_epoch_utilities],
        "seconds": seconds,
    }
    if extra:
        meta.update(extra)
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
