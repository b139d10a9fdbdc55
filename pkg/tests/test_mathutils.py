"""Special functions against independent references: analytic identities,
an extended-precision oracle (mpmath), finite differences, and Monte
Carlo integration."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mpmath

from softds.mathutils import (
    digamma,
    dirichlet_log_density,
    log_gamma,
    log_sum_exp,
    normalize_log,
    sorted_sum,
)

mpmath.mp.dps = 50

EULER_GAMMA = 0.5772156649015329

# frozen from the 50-digit mpmath oracle above
LGAMMA_3_7 = 1.4280723266653879
LSE_M1_M2_M3 = -0.5923940355556196


class TestLogGamma:
    def test_at_one(self):
        assert log_gamma(1.0) == pytest.approx(0.0, abs=1e-12)

    def test_at_half(self):
        # ln Gamma(1/2) = ln sqrt(pi)
        assert log_gamma(0.5) == pytest.approx(0.5723649429247001, abs=1e-12)

    def test_against_extended_precision_oracle(self):
        assert log_gamma(3.7) == pytest.approx(LGAMMA_3_7, abs=1e-12)
        assert LGAMMA_3_7 == float(mpmath.loggamma(mpmath.mpf("3.7")))

    def test_absolute_error_small_arguments(self):
        # value magnitudes up to ~8e4 here, so 1e-10 absolute is meaningful
        for x in np.logspace(-6, 4, 300):
            ref = float(mpmath.loggamma(mpmath.mpf(repr(float(x)))))
            assert abs(log_gamma(float(x)) - ref) <= 1e-10, x

    def test_relative_error_large_arguments(self):
        # above ~1e4 the value outgrows 1e-10 absolute resolution of a
        # float64; the error stays at a few ulp relative
        for x in np.logspace(4, 6, 60):
            ref = float(mpmath.loggamma(mpmath.mpf(repr(float(x)))))
            assert abs(log_gamma(float(x)) - ref) <= 5e-14 * abs(ref), x

    def test_recurrence(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(1e-9, 100.0, size=1000)
        lhs = log_gamma(x + 1.0) - log_gamma(x) - np.log(x)
        assert np.max(np.abs(lhs)) <= 1e-9

    @pytest.mark.parametrize("bad", [0.0, -1.0, np.nan, np.inf])
    def test_domain(self, bad):
        with pytest.raises(ValueError):
            log_gamma(bad)

    def test_array_input(self):
        out = log_gamma(np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(out, [0.0, 0.0, math.log(2.0)], atol=1e-12)


class TestDigamma:
    def test_at_one(self):
        assert digamma(1.0) == pytest.approx(-EULER_GAMMA, abs=1e-12)

    def test_at_two(self):
        # psi(2) = 1 - gamma via the recurrence psi(x+1) = psi(x) + 1/x
        assert digamma(2.0) == pytest.approx(1.0 - EULER_GAMMA, abs=1e-12)

    def test_against_finite_difference_oracle(self):
        h = 1e-6
        fd = (log_gamma(0.3 + h) - log_gamma(0.3 - h)) / (2.0 * h)
        assert digamma(0.3) == pytest.approx(fd, abs=1e-6)

    def test_against_extended_precision(self):
        for x in np.logspace(-4, 6, 200):
            ref = float(mpmath.digamma(mpmath.mpf(repr(float(x)))))
            assert abs(digamma(float(x)) - ref) <= 1e-10, x
        # below 1e-4 the -1/x pole dominates; relative error stays tiny
        for x in np.logspace(-6, -4, 40):
            ref = float(mpmath.digamma(mpmath.mpf(repr(float(x)))))
            assert abs(digamma(float(x)) - ref) <= 1e-12 * abs(ref), x

    def test_recurrence(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(1e-9, 100.0, size=1000)
        lhs = digamma(x + 1.0) - digamma(x) - 1.0 / x
        assert np.max(np.abs(lhs)) <= 1e-9

    def test_is_derivative_of_log_gamma(self):
        h = 1e-6
        for x in np.linspace(0.1, 100.0, 200):
            fd = (log_gamma(x + h) - log_gamma(x - h)) / (2.0 * h)
            assert abs(digamma(x) - fd) <= 1e-5 * max(1.0, abs(fd))

    @pytest.mark.parametrize("bad", [0.0, -0.5, np.nan, np.inf])
    def test_domain(self, bad):
        with pytest.raises(ValueError):
            digamma(bad)


class TestLogSumExp:
    def test_two_zeros(self):
        assert log_sum_exp([0.0, 0.0]) == pytest.approx(math.log(2.0), abs=1e-14)

    def test_shift_by_max_avoids_overflow(self):
        assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(
            1000.0 + math.log(2.0), abs=1e-11)

    def test_against_extended_precision(self):
        assert log_sum_exp([-1.0, -2.0, -3.0]) == pytest.approx(
            LSE_M1_M2_M3, abs=1e-14)
        assert LSE_M1_M2_M3 == float(
            mpmath.log(mpmath.e ** -1 + mpmath.e ** -2 + mpmath.e ** -3))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            log_sum_exp([])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            log_sum_exp([0.0, np.nan])


class TestNormalizeLog:
    def test_uniform(self):
        np.testing.assert_allclose(normalize_log([0.0, 0.0]), [0.5, 0.5],
                                   atol=1e-15)

    def test_ratio(self):
        out = normalize_log([math.log(1.0), math.log(3.0)])
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-14)

    @given(st.lists(st.floats(-700.0, 700.0), min_size=1, max_size=8),
           st.floats(-500.0, 500.0))
    @settings(max_examples=200, deadline=None)
    def test_shift_invariance(self, w, c):
        base = normalize_log(np.asarray(w))
        shifted = normalize_log(np.asarray(w) + c)
        np.testing.assert_allclose(shifted, base, atol=1e-12)

    @given(st.lists(st.floats(-700.0, 700.0), min_size=1, max_size=8))
    @settings(max_examples=200, deadline=None)
    def test_output_is_probability_vector(self, w):
        out = normalize_log(np.asarray(w))
        assert np.all(out >= 0.0)
        assert abs(out.sum() - 1.0) <= 1e-12


class TestDirichletLogDensity:
    def test_uniform_parameters(self):
        assert dirichlet_log_density([0.5, 0.5], [1.0, 1.0]) == pytest.approx(
            0.0, abs=1e-14)

    def test_linear_density(self):
        # pdf = c_0 / B(2, 1) = 0.5 / 0.5 = 1
        assert dirichlet_log_density([0.5, 0.5], [2.0, 1.0]) == pytest.approx(
            0.0, abs=1e-12)

    def test_symmetric_beta(self):
        # B(2, 2) = 1/6, pdf at the center = 0.25 * 6 = 1.5
        assert dirichlet_log_density([0.5, 0.5], [2.0, 2.0]) == pytest.approx(
            0.4054651081081644, abs=1e-12)

    def test_rejects_nonpositive_parameters(self):
        with pytest.raises(ValueError):
            dirichlet_log_density([0.5, 0.5], [1.0, 0.0])
        with pytest.raises(ValueError):
            dirichlet_log_density([0.5, 0.5], [-1.0, 2.0])

    def test_integrates_to_one(self):
        # Monte Carlo over the 2-simplex: uniform samples have density 2,
        # so the integral of the pdf is E_uniform[pdf] / 2.
        rng = np.random.default_rng(5)
        params = np.array([2.0, 3.0, 1.5])
        samples = np.maximum(rng.dirichlet(np.ones(3), size=100_000), 1e-300)
        pdf = np.exp([dirichlet_log_density(row, params) for row in samples])
        mass = float(pdf.mean() / 2.0)
        assert abs(mass - 1.0) <= 0.02


class TestSortedSum:
    def test_permutation_invariance_bitwise(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((50, 7, 4))
        perm = rng.permutation(7)
        assert np.array_equal(sorted_sum(a, axis=1),
                              sorted_sum(a[:, perm, :], axis=1))
