"""
Tests for CyclingLab Cycling Profile
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.special import gamma as scipy_gamma

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.profile import (
    A_func,
    B_func,
    CyclingParams,
    S_hat,
    S_tilde,
    SumParams,
    complex_gamma,
    fourier_coefficient,
    fourier_terms,
    laplace_sum,
    profile_fourier,
    profile_sum,
)

LAMBDA_T = [0.3, 0.5, 1.0, 2.0, 5.0]


class TestBuildingBlocks:
    """Tests for A and B."""

    def test_a_integrates_to_one_half(self):
        x = np.linspace(-4.0, 25.0, 200001)
        assert np.trapezoid(A_func(x), x) == pytest.approx(0.5, abs=1e-8)

    def test_a_underflows_to_zero_on_the_left(self):
        assert float(A_func(-400.0)) == 0.0
        assert np.all(np.isfinite(A_func(np.array([-1e4, 0.0, 1e4]))))

    def test_b_is_a_distribution_function(self):
        x = np.array([-5.0, 0.0, 5.0, 50.0])
        b = B_func(x)
        assert b[0] == pytest.approx(0.0, abs=1e-12)
        assert b[1] == pytest.approx(math.exp(-0.5))
        assert b[-1] == pytest.approx(1.0)
        assert np.all(np.diff(b) > 0)


class TestProfile:
    """Tests for the two representations of P."""

    @pytest.mark.parametrize("lt", LAMBDA_T)
    def test_dual_representation(self, lt):
        p = CyclingParams(lt)
        x = np.arange(512) / 512.0
        assert np.max(np.abs(profile_sum(p, x) - profile_fourier(p, x))) <= 1e-8

    @pytest.mark.parametrize("lt", LAMBDA_T)
    def test_mean_over_period(self, lt):
        p = CyclingParams(lt)
        x = np.arange(4096) / 4096.0
        assert float(np.mean(profile_sum(p, x))) == pytest.approx(0.5 / lt, rel=1e-8)

    def test_period_one(self):
        p = CyclingParams(1.0)
        x = np.linspace(0.0, 1.0, 50)
        np.testing.assert_allclose(profile_sum(p, x + 1.0), profile_sum(p, x), rtol=1e-13)
        np.testing.assert_allclose(profile_sum(p, x - 37.0), profile_sum(p, x), rtol=1e-12)

    def test_positive(self):
        x = np.linspace(0.0, 1.0, 101)
        for lt in LAMBDA_T:
            assert np.all(profile_sum(CyclingParams(lt), x) > 0)

    def test_flattens_at_high_frequency(self):
        x = np.arange(1024) / 1024.0
        ratios = []
        for lt in sorted(LAMBDA_T, reverse=True):
            values = profile_sum(CyclingParams(lt), x)
            ratios.append(values.max() / values.min())
        assert all(a > b for a, b in zip(ratios, ratios[1:]))
        assert ratios[-1] < 1.01

    def test_lambda_t_must_be_positive(self):
        with pytest.raises(ValueError):
            CyclingParams(0.0)


class TestFourier:
    """Tests for the complex-Gamma coefficients."""

    def test_gamma_against_scipy(self):
        z = np.array([1.0, 2.5, 0.3, 1 - 2j, 1 - 7.5j, 4 + 1j])
        np.testing.assert_allclose(complex_gamma(z), scipy_gamma(z), rtol=1e-12)

    def test_zeroth_coefficient(self):
        for lt in LAMBDA_T:
            c0 = fourier_coefficient(CyclingParams(lt), 0)
            assert c0.real == pytest.approx(0.5 / lt, rel=1e-13)
            assert abs(c0.imag) < 1e-15

    def test_coefficients_decay(self):
        p = CyclingParams(1.0)
        q = np.arange(1, 8)
        mags = np.abs(fourier_coefficient(p, q))
        assert np.all(np.diff(mags) < 0)

    def test_term_count_grows_with_lambda_t(self):
        assert fourier_terms(CyclingParams(5.0)) > fourier_terms(CyclingParams(0.3))


class TestDoubleSums:
    """Tests for S~, S^ and the Laplace sum."""

    def test_s_hat_is_profile(self):
        p = CyclingParams(1.0)
        eta, th = np.array([2.0, 3.3]), np.array([0.4, 1.1])
        np.testing.assert_allclose(S_hat(p, eta, th), profile_sum(p, (eta - th) / 1.0))

    def test_laplace_sum_equals_scaled_s_tilde(self):
        lt, sigma, n = 1.0, 0.05, 12
        gamma0, gamma_t = 0.7, 1.9
        sp = SumParams(
            n=n, eta=-math.log(sigma), t=n + 0.3,
            gamma0=gamma0, gamma_t=gamma_t,
            theta0=-0.5 * math.log(gamma0), theta_bar=-0.5 * math.log(gamma_t),
            lambdaT=lt,
        )
        assert laplace_sum(n, sigma, gamma0, gamma_t, lt) == pytest.approx(sigma ** 2 * S_tilde(sp), rel=1e-12)

    def test_s_tilde_approaches_profile_for_large_n(self):
        lt, eta = 1.0, 4.0
        theta0, theta_bar = 0.2, 0.6
        sp = SumParams(n=40, eta=eta, t=40.5, gamma0=1.0, gamma_t=1.0,
                       theta0=theta0, theta_bar=theta_bar, lambdaT=lt)
        assert S_tilde(sp) == pytest.approx(
            float(profile_sum(CyclingParams(lt), (eta - theta_bar) / lt)), rel=1e-6
        )

    def test_sum_params_validation(self):
        with pytest.raises(ValueError):
            SumParams(n=0, eta=1.0, t=0.5, gamma0=1.0, gamma_t=1.0, theta0=0.0, theta_bar=0.0, lambdaT=1.0)
        sp = SumParams(n=3, eta=2.0, t=3.5, gamma0=1.0, gamma_t=1.0, theta0=0.0, theta_bar=0.0, lambdaT=1.0)
        assert sp.sigma == pytest.approx(math.exp(-2.0))
