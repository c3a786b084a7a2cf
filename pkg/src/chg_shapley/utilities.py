"""Subset utilities over per-datum gradients: chg, hardness, and gradient kinds.

A `GradientSet` holds one vector and one loss per datum.  The chg kind
scores a subset by how close its loss-weighted mean gradient lands to the
full-set reference vector; the gradient kind does the same with raw
gradients; the hardness kind scores a subset by its mean loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .shapley import (
    GameSpec,
    ShapleyValues,
    chg_closed_form_shapley,
    exact_shapley,
    harmonic_sums,
)

KINDS = ("chg", "hardness", "gradient")

# Oracle-calibrated mean-game weights are solved by enumeration up to this
# size; larger n uses the harmonic expression the calibration pins down.
_CALIBRATION_LIMIT = 10


def _check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown utility kind {kind!r}; expected one of {KINDS}")


@dataclass
class GradientSet:
    """Per-datum vectors and losses; `weighted` marks vectors already scaled by loss."""

    vectors: np.ndarray  # n x d
    losses: np.ndarray  # n, non-negative
    weighted: bool = False

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=float)
        self.losses = np.asarray(self.losses, dtype=float)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1 or self.vectors.shape[1] < 1:
            raise ValueError(f"vectors must be n x d with n, d >= 1, got {self.vectors.shape}")
        if self.losses.shape != (self.vectors.shape[0],):
            raise ValueError(
                f"losses must align with vectors: {self.losses.shape} vs {self.vectors.shape}"
            )
        if not (np.all(np.isfinite(self.vectors)) and np.all(np.isfinite(self.losses))):
            raise ValueError("non-finite entries in gradient set")
        if np.any(self.losses < 0):
            raise ValueError("losses must be non-negative")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def weighted_vectors(self) -> np.ndarray:
        """Loss-weighted vectors l_i * grad_i (identity if already weighted)."""
        if self.weighted:
            return self.vectors
        return self.losses[:, None] * self.vectors

    def raw_vectors(self) -> np.ndarray:
        if self.weighted:
            raise ValueError("vectors are already loss-weighted; raw gradients unavailable")
        return self.vectors

    def restrict(self, indices) -> "GradientSet":
        """The sub-collection at `indices`, preserving the weighted flag."""
        idx = np.asarray(indices, dtype=np.intp)
        return GradientSet(self.vectors[idx], self.losses[idx], weighted=self.weighted)


@dataclass(frozen=True)
class UtilityScheme:
    """A utility kind plus its reference vector (unused for hardness)."""

    kind: str
    alpha: np.ndarray


def reference_vector(gs: GradientSet, kind: str) -> np.ndarray:
    """Full-set mean the quadratic kinds measure distance to.

    chg averages the loss-weighted vectors, gradient averages the raw
    ones, hardness has no reference (zero vector returned).
    """
    _check_kind(kind)
    if kind == "chg":
        return gs.weighted_vectors().mean(axis=0)
    if kind == "gradient":
        return gs.raw_vectors().mean(axis=0)
    return np.zeros(gs.d)


def scheme_for(gs: GradientSet, kind: str) -> UtilityScheme:
    return UtilityScheme(kind=kind, alpha=reference_vector(gs, kind))


def _subset_indices(gs: GradientSet, subset) -> np.ndarray:
    idx = np.asarray(list(subset) if isinstance(subset, (set, frozenset)) else subset,
                     dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("subset must be a flat index collection")
    if idx.size and (idx.min() < 0 or idx.max() >= gs.n):
        raise ValueError(f"subset indices out of range for n={gs.n}")
    return idx


def subset_utility(scheme: UtilityScheme, gs: GradientSet, subset) -> float:
    """U(S) per the scheme's kind; U(empty) = 0 for every kind."""
    _check_kind(scheme.kind)
    idx = _subset_indices(gs, subset)
    if idx.size == 0:
        return 0.0
    if scheme.kind == "hardness":
        return float(gs.losses[idx].mean())
    vectors = gs.weighted_vectors() if scheme.kind == "chg" else gs.raw_vectors()
    alpha = np.asarray(scheme.alpha, dtype=float)
    if alpha.shape != (gs.d,):
        raise ValueError(f"alpha must be a length-{gs.d} vector, got {alpha.shape}")
    diff = vectors[idx].mean(axis=0) - alpha
    return float(alpha @ alpha - diff @ diff)


def utility_game(scheme: UtilityScheme, gs: GradientSet) -> GameSpec:
    """The cooperative game `subset_utility` defines over the data."""
    return GameSpec(n=gs.n, utility=lambda idx: subset_utility(scheme, gs, idx))


def chg_inputs_for_closed_form(gs: GradientSet, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """(X, alpha) such that the closed form equals the game's Shapley values."""
    _check_kind(kind)
    if kind == "hardness":
        raise ValueError("hardness utility is not quadratic; use hardness_shapley")
    X = gs.weighted_vectors() if kind == "chg" else gs.raw_vectors()
    return X, X.mean(axis=0)


def gradient_set_values(gs: GradientSet, kind: str) -> ShapleyValues:
    """Shapley values of the whole collection under one utility kind."""
    if kind == "hardness":
        return hardness_shapley(gs.losses)
    X, alpha = chg_inputs_for_closed_form(gs, kind)
    return chg_closed_form_shapley(X, alpha)


@lru_cache(maxsize=None)
def _mean_game_weights(n: int) -> tuple[float, float]:
    """(self, other) weights for the subset-mean game of n players.

    The game U(S) = mean of l over S is linear in l, so a datum's value is
    a * l_j + b * sum of the other losses.  For small n both weights are
    solved from the enumeration oracle on two basis games (l = e_1 and
    l = all-ones); past the calibration limit the harmonic expression the
    calibration pins down takes over.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    if n == 1:
        return 1.0, 0.0
    if n <= _CALIBRATION_LIMIT:
        basis = np.zeros(n)
        basis[0] = 1.0
        phi_e1 = exact_shapley(
            GameSpec(n=n, utility=lambda idx: float(basis[idx].mean()))
        ).values
        phi_ones = exact_shapley(
            GameSpec(n=n, utility=lambda idx: 1.0)
        ).values
        a = float(phi_e1[0])
        b = (float(phi_ones[0]) - a) / (n - 1)
        return a, b
    h = harmonic_sums(n)
    return h.h1 / n, -(h.h1 - 1.0) / (n * (n - 1))


def hardness_shapley(losses) -> ShapleyValues:
    """Closed-form Shapley values of the mean-loss game U(S) = mean_S l."""
    l = np.asarray(losses, dtype=float)
    if l.ndim != 1 or l.size < 1:
        raise ValueError(f"losses must be a non-empty vector, got shape {l.shape}")
    if not np.all(np.isfinite(l)):
        raise ValueError("non-finite losses")
    a, b = _mean_game_weights(l.size)
    total = float(l.sum())
    return ShapleyValues(values=a * l + b * (total - l), method="closed_form")


# ---------------------------------------------------------------------------
# Serialization: text matrix file with header "n d weighted_flag"
# ---------------------------------------------------------------------------

def save_gradient_set(gs: GradientSet, path) -> None:
    """Write the text form: header, n rows of d floats, then n losses.

    Floats are printed with 17 significant digits, so loading reproduces
    the arrays bit for bit.
    """
    lines = [f"{gs.n} {gs.d} {int(gs.weighted)}"]
    for row in gs.vectors:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    for loss in gs.losses:
        lines.append(f"{loss:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_gradient_set(path) -> GradientSet:
    text = Path(path).read_text().split("\n")
    header = text[0].split()
    if len(header) != 3:
        raise ValueError(f"bad header {text[0]!r}: expected 'n d weighted_flag'")
    n, d, flag = (int(tok) for tok in header)
    if flag not in (0, 1):
        raise ValueError(f"weighted_flag must be 0 or 1, got {flag}")
    body = [line for line in text[1:] if line.strip()]
    if len(body) != n + n:
        raise ValueError(f"expected {n} vector rows plus {n} losses, got {len(body)} lines")
    vectors = np.array([[float(tok) for tok in line.split()] for line in body[:n]])
    if vectors.shape != (n, d):
        raise ValueError(f"vector block has shape {vectors.shape}, header says {(n, d)}")
    losses = np.array([float(line) for line in body[n:]])
    return GradientSet(vectors=vectors, losses=losses, weighted=bool(flag))
