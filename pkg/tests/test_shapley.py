"""Tests for the core Shapley routines against brute-force enumeration."""

import math
from pathlib import Path

import numpy as np
import pytest

from chg_shapley.shapley import (
    GameSizeError,
    GameSpec,
    ShapleyValues,
    chg_closed_form_shapley,
    chg_game,
    closed_form_coefficients,
    exact_shapley,
    harmonic_sums,
    mean_distance_utility,
    permutation_shapley,
    shapley_linear_term,
)

FIXTURES = Path(__file__).parent / "fixtures"


def load_fixture(name: str) -> np.ndarray:
    return np.array([float(line) for line in (FIXTURES / name).read_text().split()])


def additive_game(v: np.ndarray) -> GameSpec:
    return GameSpec(n=v.size, utility=lambda idx: float(v[idx].sum()))


# ---------------------------------------------------------------------------
# Harmonic sums
# ---------------------------------------------------------------------------

class TestHarmonicSums:
    def test_single_term(self):
        h = harmonic_sums(1)
        assert h.h1 == 1.0
        assert h.h2 == 1.0

    def test_n4_exact_fractions(self):
        h = harmonic_sums(4)
        assert h.h1 == pytest.approx(25 / 12, abs=1e-15)
        assert h.h2 == pytest.approx(205 / 144, abs=1e-15)

    def test_n3_exact_fractions(self):
        h = harmonic_sums(3)
        assert h.h1 == pytest.approx(11 / 6, abs=1e-15)
        assert h.h2 == pytest.approx(49 / 36, abs=1e-15)

    def test_zero_rejected(self):
        with pytest.raises(ValueError):
            harmonic_sums(0)

    def test_increment_is_reciprocal(self):
        for n in range(2, 200):
            assert harmonic_sums(n).h1 - harmonic_sums(n - 1).h1 == pytest.approx(
                1.0 / n, abs=1e-12
            )

    def test_monotone_and_bounded(self):
        prev = harmonic_sums(1)
        for n in range(2, 100):
            h = harmonic_sums(n)
            assert h.h1 > prev.h1
            assert h.h2 > prev.h2
            assert h.h2 < h.h1
            assert h.h2 < math.pi**2 / 6
            prev = h


# ---------------------------------------------------------------------------
# Closed-form coefficients
# ---------------------------------------------------------------------------

class TestCoefficients:
    def test_small_n_rejected(self):
        for n in (0, 1, 2):
            with pytest.raises(ValueError):
                closed_form_coefficients(n)

    def test_finite_at_boundary(self):
        c = closed_form_coefficients(3)
        for value in (c.c_self, c.c_cross, c.c_sumsq, c.c_quad, c.c_alpha_self, c.c_alpha_sum):
            assert math.isfinite(value)

    def test_recomputation_bit_identical(self):
        for n in (3, 7, 100, 12345):
            a = closed_form_coefficients(n)
            b = closed_form_coefficients(n)
            assert (a.c_self, a.c_cross, a.c_sumsq, a.c_quad, a.c_alpha_self, a.c_alpha_sum) == (
                b.c_self, b.c_cross, b.c_sumsq, b.c_quad, b.c_alpha_self, b.c_alpha_sum
            )

    @pytest.mark.parametrize("n", [3, 10])
    def test_boundary_sizes_match_oracle(self, n):
        rng = np.random.default_rng(10 + n)
        X = rng.standard_normal((n, 4))
        alpha = rng.standard_normal(4)
        closed = chg_closed_form_shapley(X, alpha).values
        exact = exact_shapley(chg_game(X, alpha)).values
        assert np.max(np.abs(closed - exact)) <= 1e-9


# ---------------------------------------------------------------------------
# Exact enumeration
# ---------------------------------------------------------------------------

class TestExactShapley:
    def test_constant_game_splits_evenly(self):
        game = GameSpec(n=3, utility=lambda idx: 5.0)
        values = exact_shapley(game).values
        assert values == pytest.approx([5.0 / 3] * 3, abs=1e-12)

    def test_additive_game_recovers_contributions(self):
        v = np.array([1.5, -2.0, 0.25, 4.0])
        values = exact_shapley(additive_game(v)).values
        assert values == pytest.approx(v, abs=1e-12)

    def test_cardinality_squared(self):
        game = GameSpec(n=3, utility=lambda idx: float(idx.size**2))
        values = exact_shapley(game).values
        assert values == pytest.approx([3.0, 3.0, 3.0], abs=1e-12)

    def test_size_limit_refusal(self):
        game = GameSpec(n=8, utility=lambda idx: float(idx.size))
        with pytest.raises(GameSizeError):
            exact_shapley(game, limit=6)
        assert exact_shapley(game, limit=8).values == pytest.approx([1.0] * 8)

    def test_method_tag(self):
        game = GameSpec(n=2, utility=lambda idx: 1.0)
        assert exact_shapley(game).method == "exact"


# ---------------------------------------------------------------------------
# Closed form
# ---------------------------------------------------------------------------

class TestChgClosedForm:
    def test_single_player_takes_everything(self):
        x = np.array([[0.3, -1.2]])
        alpha = np.array([0.7, 0.1])
        values = chg_closed_form_shapley(x, alpha).values
        expected = alpha @ alpha - (x[0] - alpha) @ (x[0] - alpha)
        assert values == pytest.approx([expected], abs=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3, 5, 9])
    def test_all_rows_at_alpha_split_evenly(self, n):
        alpha = np.array([1.0, -2.0, 0.5])
        X = np.tile(alpha, (n, 1))
        values = chg_closed_form_shapley(X, alpha).values
        assert values == pytest.approx([float(alpha @ alpha) / n] * n, abs=1e-9)

    def test_zero_game_is_zero(self):
        values = chg_closed_form_shapley(np.zeros((4, 3)), np.zeros(3)).values
        assert values == pytest.approx([0.0] * 4, abs=0.0)

    def test_golden_fixture_n5_d3(self):
        rng = np.random.default_rng(20240511)
        X = rng.standard_normal((5, 3))
        alpha = rng.standard_normal(3)
        expected = load_fixture("chg_values_n5_d3_seed20240511.txt")
        closed = chg_closed_form_shapley(X, alpha).values
        exact = exact_shapley(chg_game(X, alpha)).values
        assert closed == pytest.approx(expected, abs=1e-9)
        assert exact == pytest.approx(expected, abs=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            chg_closed_form_shapley(np.array([[np.nan, 1.0]]), np.zeros(2))
        with pytest.raises(ValueError):
            chg_closed_form_shapley(np.ones((2, 2)), np.array([np.inf, 0.0]))

    def test_two_player_route_matches_enumeration(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((2, 3))
        alpha = rng.standard_normal(3)
        closed = chg_closed_form_shapley(X, alpha)
        exact = exact_shapley(chg_game(X, alpha))
        assert closed.values == pytest.approx(exact.values, abs=0.0)


# ---------------------------------------------------------------------------
# Linear term (the 2<mean, alpha> part of the utility)
# ---------------------------------------------------------------------------

class TestLinearTerm:
    def test_zero_alpha_gives_zeros(self):
        rng = np.random.default_rng(0)
        values = shapley_linear_term(rng.standard_normal((5, 2)), np.zeros(2)).values
        assert values == pytest.approx([0.0] * 5, abs=0.0)

    def test_identical_rows_split_evenly(self):
        x = np.array([0.4, -1.0])
        alpha = np.array([2.0, 0.5])
        n = 6
        values = shapley_linear_term(np.tile(x, (n, 1)), alpha).values
        assert values == pytest.approx([2.0 * float(x @ alpha) / n] * n, abs=1e-12)

    def test_random_n6_matches_oracle(self):
        rng = np.random.default_rng(66)
        X = rng.standard_normal((6, 4))
        alpha = rng.standard_normal(4)

        def linear_part(idx):
            return 2.0 * float(X[idx].mean(axis=0) @ alpha)

        exact = exact_shapley(GameSpec(n=6, utility=linear_part)).values
        assert shapley_linear_term(X, alpha).values == pytest.approx(exact, abs=1e-9)

    def test_single_player_fallback(self):
        X = np.array([[1.0, 2.0]])
        alpha = np.array([3.0, -1.0])
        values = shapley_linear_term(X, alpha).values
        assert values == pytest.approx([2.0 * float(X[0] @ alpha)], abs=1e-12)


# ---------------------------------------------------------------------------
# Permutation Monte Carlo
# ---------------------------------------------------------------------------

class TestPermutationShapley:
    def test_additive_game_exact_for_any_sample_count(self):
        v = np.array([2.0, -1.0, 0.5, 3.0, 1.25])
        for samples in (1, 3, 10):
            values = permutation_shapley(additive_game(v), samples=samples, seed=4).values
            assert values == pytest.approx(v, abs=1e-12)

    def test_single_sample_equals_that_permutations_marginals(self):
        from scipy.stats import qmc

        rng = np.random.default_rng(5)
        X = rng.standard_normal((6, 3))
        alpha = rng.standard_normal(3)
        game = chg_game(X, alpha)
        seed = 99
        # First walked permutation: the identity rotation of the first
        # scrambled-Halton base permutation.
        perm = np.argsort(qmc.Halton(d=6, scramble=True, seed=seed).random(1), axis=1)[0]
        expected = np.zeros(6)
        prev = 0.0
        for pos in range(6):
            val = game.utility(np.sort(perm[: pos + 1]))
            expected[perm[pos]] = val - prev
            prev = val
        values = permutation_shapley(game, samples=1, seed=seed).values
        assert values == pytest.approx(expected, abs=1e-12)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(6)
        game = chg_game(rng.standard_normal((7, 2)), rng.standard_normal(2))
        a = permutation_shapley(game, samples=500, seed=123).values
        b = permutation_shapley(game, samples=500, seed=123).values
        assert np.array_equal(a, b)

    def test_error_within_range_at_10k(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((8, 4))
        alpha = rng.standard_normal(4)
        game = chg_game(X, alpha)
        exact = exact_shapley(game).values
        mc = permutation_shapley(game, samples=10_000, seed=7).values
        value_range = exact.max() - exact.min()
        assert np.max(np.abs(mc - exact)) <= 1e-2 * value_range

    def test_efficiency_holds_per_walk(self):
        # Marginals along any permutation telescope to U(N), so the
        # estimate is exactly efficient at every sample count.
        rng = np.random.default_rng(8)
        X = rng.standard_normal((6, 3))
        alpha = rng.standard_normal(3)
        game = chg_game(X, alpha)
        grand = game.utility(np.arange(6))
        for samples in (1, 7, 200):
            total = permutation_shapley(game, samples, seed=2).values.sum()
            assert abs(total - grand) <= 1e-9 * max(1.0, abs(grand))

    def test_input_validation(self):
        game = GameSpec(n=3, utility=lambda idx: 0.0)
        with pytest.raises(ValueError):
            permutation_shapley(game, samples=0)


# ---------------------------------------------------------------------------
# Axioms and structural properties
# ---------------------------------------------------------------------------

class TestProperties:
    def test_efficiency_closed_form(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            n = int(rng.integers(3, 40))
            d = int(rng.integers(1, 6))
            X = rng.standard_normal((n, d))
            alpha = rng.standard_normal(d)
            values = chg_closed_form_shapley(X, alpha).values
            m = X.mean(axis=0)
            grand = float(alpha @ alpha - (m - alpha) @ (m - alpha))
            assert abs(values.sum() - grand) <= 1e-9 * max(1.0, abs(grand))

    def test_symmetry_duplicated_rows(self):
        rng = np.random.default_rng(12)
        X = rng.standard_normal((7, 3))
        X[4] = X[1]
        alpha = rng.standard_normal(3)
        values = chg_closed_form_shapley(X, alpha).values
        assert abs(values[4] - values[1]) <= 1e-12

    def test_dummy_player_exact_zero(self):
        v = np.array([2.0, 0.0, -1.0, 0.5])  # player 1 never changes the sum

        def skip_dummy(idx):
            return float(v[idx].sum())

        values = exact_shapley(GameSpec(n=4, utility=skip_dummy)).values
        assert values[1] == 0.0

    def test_linearity_decomposition(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            n = int(rng.integers(3, 11))
            d = int(rng.integers(1, 5))
            X = rng.standard_normal((n, d))
            alpha = rng.standard_normal(d)
            total = chg_closed_form_shapley(X, alpha).values
            # U1(S) = -||mean_S x||^2 is the utility with alpha = 0.
            quadratic = exact_shapley(chg_game(X, np.zeros(d))).values
            linear = shapley_linear_term(X, alpha).values
            assert total == pytest.approx(quadratic + linear, abs=1e-9)

    def test_oracle_equivalence_sample(self):
        rng = np.random.default_rng(14)
        for _ in range(30):
            n = int(rng.integers(3, 13))
            d = int(rng.integers(1, 9))
            X = rng.standard_normal((n, d))
            alpha = rng.standard_normal(d)
            closed = chg_closed_form_shapley(X, alpha).values
            exact = exact_shapley(chg_game(X, alpha)).values
            scale = max(1.0, float(np.max(np.abs(exact))))
            assert np.max(np.abs(closed - exact)) <= 1e-9 * scale

    def test_value_gaps_come_from_per_datum_terms_only(self):
        rng = np.random.default_rng(15)
        X = rng.standard_normal((9, 4))
        alpha = rng.standard_normal(4)
        values = chg_closed_form_shapley(X, alpha).values
        c = closed_form_coefficients(9)
        g = X.sum(axis=0)
        sq = np.einsum("ij,ij->i", X, X)
        for j in range(9):
            for k in range(9):
                gap = (
                    c.c_self * (sq[j] - sq[k])
                    + c.c_cross * float(g @ (X[j] - X[k]))
                    + c.c_alpha_self * float(alpha @ (X[j] - X[k]))
                )
                assert values[j] - values[k] == pytest.approx(gap, abs=1e-9)

    def test_mc_error_shrinks_with_samples(self):
        improved = 0
        for seed in range(5):
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((8, 3))
            alpha = rng.standard_normal(3)
            game = chg_game(X, alpha)
            exact = exact_shapley(game).values
            small = np.max(np.abs(permutation_shapley(game, 100, seed=seed).values - exact))
            large = np.max(np.abs(permutation_shapley(game, 10_000, seed=seed).values - exact))
            improved += large <= small
        assert improved >= 4

    def test_values_container_validation(self):
        with pytest.raises(ValueError):
            ShapleyValues(values=np.array([1.0, np.nan]), method="exact")
        with pytest.raises(ValueError):
            ShapleyValues(values=np.ones((2, 2)), method="exact")


def test_mean_distance_utility_empty_set_convention():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    alpha = np.array([0.5, 0.5])
    u = mean_distance_utility(X, alpha)
    # Singleton {0}: ||alpha||^2 - ||x_0 - alpha||^2
    assert u(np.array([0])) == pytest.approx(0.5 - 0.5, abs=1e-15)
    full = u(np.array([0, 1]))
    assert full == pytest.approx(0.5, abs=1e-15)  # mean hits alpha exactly
