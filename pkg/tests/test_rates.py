"""
Tests for jump-rate laws, their moments, quantiles and finite-N discretizations.
"""
import math

import mpmath
import numpy as np
import pytest

from ranking_process.errors import DivergenceError, DomainError
from ranking_process.rates import (
    DiscreteLaw,
    EmpiricalLaw,
    ParetoLaw,
    laplace_moment,
    laplace_moment_quadrature,
    largest_remainder,
    load_empirical_file,
    make_empirical,
    mean_rate,
    quantile_upper,
    size_biased_jumped_law,
)

TWO_POINT = DiscreteLaw.from_pairs([(1.0, 0.5), (2.0, 0.5)])
DELTA_ONE = DiscreteLaw.point_mass(1.0)
TENTHS = DiscreteLaw.from_pairs([(k + 1.0, 0.1) for k in range(10)])
T_GRID = np.geomspace(1e-3, 20.0, 40)


class TestLaws:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(DomainError):
            DiscreteLaw((1.0, 2.0), (0.5, 0.6))

    def test_rates_must_be_positive(self):
        with pytest.raises(DomainError):
            DiscreteLaw((0.0, 2.0), (0.5, 0.5))
        with pytest.raises(DomainError):
            EmpiricalLaw((1.0, -1.0))
        with pytest.raises(DomainError):
            ParetoLaw(1.0, 0.0)

    def test_duplicate_atoms_merge(self):
        law = DiscreteLaw.from_pairs([(2.0, 0.25), (1.0, 0.5), (2.0, 0.25)])
        rates, weights = law.atoms()
        np.testing.assert_array_equal(rates, [1.0, 2.0])
        np.testing.assert_allclose(weights, [0.5, 0.5])

    def test_empirical_atoms(self):
        law = EmpiricalLaw((2.0, 1.0, 2.0, 2.0))
        rates, weights = law.atoms()
        np.testing.assert_array_equal(rates, [1.0, 2.0])
        np.testing.assert_allclose(weights, [0.25, 0.75])
        assert law.min_rate() == 1.0

    def test_cdf(self):
        np.testing.assert_allclose(TWO_POINT.cdf([0.5, 1.0, 1.5, 2.0, 3.0]), [0.0, 0.5, 0.5, 1.0, 1.0])
        np.testing.assert_allclose(ParetoLaw(1.0, 2.0).cdf([0.5, 1.0, 2.0]), [0.0, 0.0, 0.75])

    def test_pareto_sampler_respects_support(self):
        draws = ParetoLaw(2.0, 1.5).sample(10_000, np.random.default_rng(1))
        assert draws.min() >= 2.0
        # P(W > 4) = (2/4)^1.5
        assert np.mean(draws > 4.0) == pytest.approx(0.5 ** 1.5, abs=0.02)


class TestLaplaceMoment:
    def test_delta(self):
        assert laplace_moment(DELTA_ONE, 2.0, 0) == pytest.approx(math.exp(-2.0), rel=1e-15)

    def test_two_point_moments_at_zero(self):
        assert laplace_moment(TWO_POINT, 0.0, 0) == 1.0
        assert laplace_moment(TWO_POINT, 0.0, 1) == 1.5
        assert laplace_moment(TWO_POINT, 0.0, 2) == 2.5

    def test_pareto_at_zero(self):
        law = ParetoLaw(1.0, 2.0)
        assert laplace_moment(law, 0.0, 0) == 1.0
        assert laplace_moment(law, 0.0, 1) == pytest.approx(2.0)
        assert math.isinf(laplace_moment(law, 0.0, 2))
        assert math.isinf(laplace_moment(ParetoLaw(1.0, 0.5), 0.0, 1))

    @pytest.mark.parametrize("b", [0.5, 1.5, 2.0, 3.0])
    @pytest.mark.parametrize("t", [0.5, 1.0, 3.0])
    @pytest.mark.parametrize("k", [0, 1, 2])
    def test_pareto_gamma_form_matches_quadrature(self, b, t, k):
        law = ParetoLaw(1.0, b)
        assert laplace_moment(law, t, k) == pytest.approx(laplace_moment_quadrature(law, t, k), rel=1e-8)

    def test_pareto_relaxation_against_mpmath(self):
        law = ParetoLaw(1.0, 0.5)
        expected = float(0.5 * mpmath.gammainc(-0.5, a=1.0))
        assert laplace_moment(law, 1.0, 0) == pytest.approx(expected, rel=1e-12)
        assert 1.0 - laplace_moment(law, 1.0, 0) == pytest.approx(0.910926, abs=1e-6)

    @pytest.mark.parametrize("law", [DELTA_ONE, TWO_POINT, TENTHS, ParetoLaw(1.0, 0.5), ParetoLaw(1.0, 2.0)], ids=repr)
    def test_relaxation_strictly_decreasing(self, law):
        values = np.array([laplace_moment(law, t, 0) for t in T_GRID])
        assert laplace_moment(law, 0.0, 0) == 1.0
        assert values[0] < 1.0
        assert np.all(np.diff(values) < 0.0)

    @pytest.mark.parametrize("law", [TWO_POINT, TENTHS, ParetoLaw(1.0, 0.5), ParetoLaw(1.0, 2.0)], ids=repr)
    def test_quantile_discretization_converges(self, law):
        finite = make_empirical(law, 10_000)
        gap = max(abs(laplace_moment(finite, t, 0) - laplace_moment(law, t, 0)) for t in np.geomspace(0.01, 10.0, 25))
        assert gap < 1e-2

    def test_negative_time(self):
        with pytest.raises(DomainError):
            laplace_moment(TWO_POINT, -1.0, 0)

    def test_bad_order(self):
        with pytest.raises(DomainError):
            laplace_moment(TWO_POINT, 1.0, 3)

    def test_mean_rate(self):
        assert mean_rate(ParetoLaw(1.0, 2.0)) == pytest.approx(2.0)
        assert mean_rate(ParetoLaw(3.0, 1.5)) == pytest.approx(9.0)
        assert math.isinf(mean_rate(ParetoLaw(1.0, 1.0)))


class TestQuantile:
    def test_pareto(self):
        assert quantile_upper(ParetoLaw(1.0, 2.0), 0.25) == pytest.approx(2.0)

    def test_atomic_ties_go_to_larger_rate(self):
        assert quantile_upper(TWO_POINT, 0.3) == 2.0
        assert quantile_upper(TWO_POINT, 0.5) == 2.0
        assert quantile_upper(TWO_POINT, 0.7) == 1.0

    def test_decimal_weights(self):
        # λ([0, w]) > 1 - x picks rate 11 - 10x for ten atoms of mass 0.1
        for k in range(1, 10):
            assert quantile_upper(TENTHS, k / 10.0) == 11.0 - k

    @pytest.mark.parametrize("law", [TWO_POINT, TENTHS, ParetoLaw(1.0, 1.5)], ids=repr)
    def test_non_increasing(self, law):
        values = np.array([quantile_upper(law, x) for x in np.linspace(0.001, 0.999, 500)])
        assert np.all(np.diff(values) <= 0.0)

    def test_smallest_rate_near_one(self):
        assert quantile_upper(TWO_POINT, 1.0 - 1e-12) == 1.0

    @pytest.mark.parametrize("x", [0.0, 1.0, -0.2])
    def test_domain(self, x):
        with pytest.raises(DomainError):
            quantile_upper(TWO_POINT, x)


class TestSizeBiased:
    def test_pareto_shifts_exponent(self):
        assert size_biased_jumped_law(ParetoLaw(1.0, 3.0)) == ParetoLaw(1.0, 2.0)

    def test_discrete(self):
        law = size_biased_jumped_law(TWO_POINT)
        np.testing.assert_allclose(law.atoms()[1], [1.0 / 3.0, 2.0 / 3.0])

    def test_infinite_mean(self):
        with pytest.raises(DivergenceError):
            size_biased_jumped_law(ParetoLaw(1.0, 0.5))


class TestMakeEmpirical:
    def test_pareto_quantile(self):
        law = make_empirical(ParetoLaw(1.0, 2.0), 4)
        np.testing.assert_allclose(law.as_array(), [2.0, math.sqrt(2.0), math.sqrt(4.0 / 3.0), 1.0])

    def test_delta(self):
        np.testing.assert_array_equal(make_empirical(DELTA_ONE, 5).as_array(), np.ones(5))

    def test_two_point_is_balanced(self):
        np.testing.assert_array_equal(make_empirical(TWO_POINT, 4).as_array(), [2.0, 2.0, 1.0, 1.0])
        values = make_empirical(TWO_POINT, 2048).as_array()
        assert np.count_nonzero(values == 2.0) == 1024

    def test_decimal_weights_keep_every_atom(self):
        np.testing.assert_array_equal(make_empirical(TENTHS, 10).as_array(), np.arange(10.0, 0.0, -1.0))
        values = make_empirical(TENTHS, 30).as_array()
        np.testing.assert_array_equal(np.bincount(values.astype(int))[1:], np.full(10, 3))

    def test_largest_remainder(self):
        np.testing.assert_array_equal(largest_remainder(10, [0.1] * 10), np.ones(10))
        counts = largest_remainder(10, [1.0 / 3.0] * 3)
        assert counts.sum() == 10
        assert sorted(counts.tolist()) == [3, 3, 4]
        np.testing.assert_array_equal(largest_remainder(7, [0.5, 0.25, 0.25]), [3, 2, 2])

    def test_iid_pareto_mean(self):
        values = make_empirical(ParetoLaw(1.0, 2.0), 100_000, mode="iid", seed=7).as_array()
        sigma = values.std(ddof=1) / math.sqrt(values.size)
        assert abs(values.mean() - 2.0) <= 3.0 * sigma

    def test_iid_needs_seed(self):
        with pytest.raises(DomainError):
            make_empirical(TWO_POINT, 10, mode="iid")

    def test_iid_is_reproducible(self):
        a = make_empirical(ParetoLaw(1.0, 1.5), 100, mode="iid", seed=9)
        b = make_empirical(ParetoLaw(1.0, 1.5), 100, mode="iid", seed=9)
        assert a == b

    def test_unknown_mode(self):
        with pytest.raises(DomainError):
            make_empirical(TWO_POINT, 10, mode="sobol")

    def test_load_file(self, tmp_path):
        path = tmp_path / "rates.txt"
        path.write_text("# rates\n1.0\n2.5\n0.5\n")
        law = load_empirical_file(path)
        np.testing.assert_array_equal(law.as_array(), [1.0, 2.5, 0.5])
