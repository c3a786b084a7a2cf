"""Closed-form Shapley data valuation and subset selection from per-example gradients."""

__version__ = "0.1.0"

from .shapley import (
    chg_closed_form_shapley,
    exact_shapley,
    permutation_shapley,
    shapley_linear_term,
)
from .utilities import GradientSet, hardness_shapley, subset_utility
from .valuation import ValuationConfig, run_valuation
from .selection import SelectionConfig, run_selection_training

__all__ = [
    "GradientSet",
    "SelectionConfig",
    "ValuationConfig",
    "chg_closed_form_shapley",
    "exact_shapley",
    "hardness_shapley",
    "permutation_shapley",
    "run_selection_training",
    "run_valuation",
    "shapley_linear_term",
    "subset_utility",
    "__version__",
]
