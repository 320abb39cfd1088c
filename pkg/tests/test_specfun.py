"""Bessel functions, normal density/CDF, and the Bessel gap inequalities."""

import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldtopo import specfun
from fieldtopo.errors import DomainError, UnsupportedOrderError

J0_FIRST_ZERO = 2.404825557695773


def bessel_series_oracle(n, x, terms=48):
    """Truncated power series sum (-1)^m (x/2)^{2m+n} / (m! (m+n)!)."""
    acc = 0.0
    for m in range(terms):
        acc += (-1.0) ** m * (x / 2.0) ** (2 * m + n) / (
            math.factorial(m) * math.factorial(m + n)
        )
    return acc


def erf_oracle(x, terms=80):
    """erf by its Taylor series: 2/sqrt(pi) sum (-1)^m x^{2m+1}/(m!(2m+1))."""
    acc = 0.0
    for m in range(terms):
        acc += (-1.0) ** m * x ** (2 * m + 1) / (math.factorial(m) * (2 * m + 1))
    return 2.0 / math.sqrt(math.pi) * acc


class TestBesselJ:
    def test_order0_at_zero(self):
        assert specfun.bessel_j(0, 0.0) == 1.0

    def test_order2_at_zero(self):
        assert specfun.bessel_j(2, 0.0) == 0.0

    def test_j0_first_zero(self):
        assert abs(specfun.bessel_j(0, J0_FIRST_ZERO)) < 1e-10
        assert abs(bessel_series_oracle(0, J0_FIRST_ZERO)) < 1e-10

    def test_three_term_identity(self):
        s = 1.7
        lhs = 2.0 * specfun.bessel_j(1, s) / s
        rhs = specfun.bessel_j(0, s) + specfun.bessel_j(2, s)
        assert abs(lhs - rhs) < 1e-12

    def test_accuracy_against_scipy(self):
        xs = np.concatenate([np.linspace(0.0, 11.5, 24), np.linspace(12.5, 50.0, 26)])
        for n in (0, 1, 2, 3, 5, 10, 20, 33, 64):
            for x in xs:
                assert abs(specfun.bessel_j(n, float(x)) - scipy.special.jv(n, x)) < 1e-12

    def test_many_matches_single(self):
        x = np.array([0.0, 0.3, 2.4, 17.0, 42.0])
        table = specfun.bessel_j_many(12, x)
        for n in range(13):
            for j, xv in enumerate(x):
                assert abs(table[n, j] - specfun.bessel_j(n, float(xv))) < 1e-13

    def test_bounded_by_one(self):
        xs = np.arange(0.0, 40.5, 0.5)
        table = specfun.bessel_j_many(20, xs)
        assert np.all(np.abs(table) <= 1.0 + 1e-14)

    def test_recurrence_residual_grid(self):
        for x in np.arange(0.5, 40.1, 0.5):
            for n in range(1, 31):
                res = (specfun.bessel_j(n - 1, x) + specfun.bessel_j(n + 1, x)
                       - 2.0 * n / x * specfun.bessel_j(n, x))
                assert abs(res) < 1e-10

    @given(st.floats(0.5, 40.0), st.integers(1, 30))
    @settings(max_examples=60, deadline=None)
    def test_recurrence_residual_property(self, x, n):
        res = (specfun.bessel_j(n - 1, x) + specfun.bessel_j(n + 1, x)
               - 2.0 * n / x * specfun.bessel_j(n, x))
        assert abs(res) < 1e-10

    def test_order_above_maximum(self):
        with pytest.raises(UnsupportedOrderError):
            specfun.bessel_j(specfun.MAX_ORDER + 1, 1.0)

    def test_non_finite_argument(self):
        for bad in (math.inf, math.nan):
            with pytest.raises(DomainError):
                specfun.bessel_j(0, bad)


class TestGaussian:
    def test_at_zero(self):
        assert specfun.gaussian_pdf_cdf(0.0) == (0.3989422804014327, 0.5)

    def test_cdf_symmetry(self):
        assert abs(specfun.gaussian_cdf(-0.7) + specfun.gaussian_cdf(0.7) - 1.0) < 1e-14

    def test_cdf_975_quantile(self):
        x = 1.959963985
        oracle = 0.5 * (1.0 + erf_oracle(x / math.sqrt(2.0)))
        assert abs(specfun.gaussian_cdf(x) - 0.975) < 1e-8
        assert abs(specfun.gaussian_cdf(x) - oracle) < 1e-12

    def test_cdf_nondecreasing(self):
        xs = np.linspace(-10.0, 10.0, 2001)
        vals = [specfun.gaussian_cdf(float(x)) for x in xs]
        assert np.all(np.diff(vals) >= 0.0)

    def test_pdf_integrates_to_one(self):
        xs = np.linspace(-8.0, 8.0, 16001)
        vals = [specfun.gaussian_pdf(float(x)) for x in xs]
        assert abs(np.trapezoid(vals, xs) - 1.0) < 1e-8

    def test_tail_accuracy(self):
        # far tails must not lose precision to cancellation
        for x in (-8.0, -6.5, 6.5, 8.0):
            assert abs(specfun.gaussian_cdf(x) / scipy.special.ndtr(x) - 1.0) < 1e-12

    def test_non_finite_input(self):
        with pytest.raises(DomainError):
            specfun.gaussian_cdf(math.nan)
        with pytest.raises(DomainError):
            specfun.gaussian_pdf(math.inf)


class TestBesselInequality:
    def test_plus_coarse_grid_margin(self):
        grid = 5.0 + 0.04 * np.arange(101)
        gaps = [specfun.bessel_gap("plus", float(s)) for s in grid]
        assert min(gaps) > 0.08

    def test_minus_at_zero(self):
        assert specfun.bessel_gap("minus", 0.0) == 0.0

    def test_minus_full_scan(self):
        report = specfun.verify_bessel_inequality("minus", s_max=20.0, step=1e-3)
        assert report.grid_min >= -1e-12
        assert report.passed

    def test_plus_full_scan(self):
        report = specfun.verify_bessel_inequality("plus", s_max=20.0, step=1e-3)
        assert report.grid_min >= -1e-12
        assert report.passed

    def test_passed_iff_bound(self):
        report = specfun.verify_bessel_inequality("minus")
        assert report.passed == (report.grid_min >= specfun.INEQUALITY_BOUND)

    def test_parameter_validation(self):
        with pytest.raises(Exception):
            specfun.verify_bessel_inequality("minus", s_max=10.0, step=1e-3)
        with pytest.raises(Exception):
            specfun.verify_bessel_inequality("minus", s_max=20.0, step=0.2)
