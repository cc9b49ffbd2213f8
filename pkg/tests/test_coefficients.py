"""
Tests for CyclingLab Coefficients
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.coefficients import (
    ModelSpec,
    PeriodicFunction,
    alpha,
    alpha2,
    check_hypotheses,
    count_extrema,
    delta0,
    evaluate,
    lyapunov,
    v_star,
    v_star_extrema,
)
from src.errors import ModelError


@pytest.fixture
def reference_spec():
    """lambda T = 1, g = 2.5 (1 + 0.2 cos 2 pi t)."""
    return ModelSpec(
        a=PeriodicFunction(1.0, 1.0),
        g=PeriodicFunction(1.0, 2.5, cos=(0.5,)),
        delta1=0.1, delta2=0.3, sigma=0.35,
    )


@pytest.fixture
def constant_spec():
    return ModelSpec(
        a=PeriodicFunction.constant(1.0),
        g=PeriodicFunction.constant(1.0),
        delta1=0.1, delta2=0.3, sigma=0.3,
    )


class TestPeriodicFunction:
    """Tests for trigonometric series."""

    def test_constant_evaluates_to_mean(self):
        f = PeriodicFunction.constant(2.5, period=3.0)
        assert f.is_constant
        np.testing.assert_array_equal(f(np.linspace(0, 10, 7)), np.full(7, 2.5))

    def test_shorter_series_is_padded(self):
        f = PeriodicFunction(1.0, 1.0, cos=(0.5, 0.1), sin=(0.2,))
        assert f.sin == (0.2, 0.0)
        assert f.harmonics == [(1, 0.5, 0.2), (2, 0.1, 0.0)]

    def test_non_positive_period_rejected(self):
        with pytest.raises(ModelError):
            PeriodicFunction(0.0, 1.0)

    def test_values_are_periodic(self):
        f = PeriodicFunction(2.0, 1.0, cos=(0.3, 0.1), sin=(0.0, 0.4))
        t = np.linspace(0.0, 2.0, 33)
        np.testing.assert_allclose(f(t + 2.0), f(t), atol=1e-13)
        np.testing.assert_allclose(f(t + 200.0), f(t), atol=1e-11)

    def test_antiderivative_over_one_period_is_mean_times_period(self):
        f = PeriodicFunction(2.0, 1.5, cos=(0.3,), sin=(0.7,))
        assert float(f.antiderivative(2.0)) == pytest.approx(3.0, abs=1e-13)
        assert float(f.antiderivative(0.0)) == pytest.approx(0.0, abs=1e-15)

    def test_antiderivative_matches_quadrature(self):
        from scipy.integrate import quad

        f = PeriodicFunction(1.0, 1.0, cos=(0.5, -0.2), sin=(0.1,))
        for t in (0.3, 1.7, 4.2):
            expected, _ = quad(lambda x: float(f(x)), 0.0, t, epsabs=1e-13)
            assert float(f.antiderivative(t)) == pytest.approx(expected, rel=1e-11)

    def test_derivative_matches_finite_difference(self):
        f = PeriodicFunction(1.0, 1.0, cos=(0.5,), sin=(0.3,))
        t, h = np.array([0.1, 0.45, 0.8]), 1e-5
        fd = (f(t + h) - f(t - h)) / (2 * h)
        np.testing.assert_allclose(f.derivative(t), fd, rtol=1e-8)

    def test_evaluate_is_call(self):
        f = PeriodicFunction(1.0, 1.0, cos=(0.5,))
        assert float(evaluate(f, 0.0)) == pytest.approx(1.5)


class TestAlpha:
    """Tests for alpha and the Lyapunov exponent."""

    def test_alpha_two_times(self):
        a = PeriodicFunction(1.0, 2.0, cos=(0.4,))
        assert float(alpha2(a, 3.0, 1.0)) == pytest.approx(float(alpha(a, 3.0) - alpha(a, 1.0)))
        assert float(alpha2(a, 3.0, 1.0)) == pytest.approx(4.0, abs=1e-12)

    def test_lyapunov_is_mean(self):
        assert lyapunov(PeriodicFunction(1.0, 0.7, cos=(0.2,))) == 0.7

    def test_lyapunov_must_be_positive(self):
        with pytest.raises(ModelError):
            lyapunov(PeriodicFunction(1.0, -0.1))


class TestModelSpec:
    """Tests for ModelSpec validation."""

    def test_levels_must_be_ordered(self):
        a = PeriodicFunction.constant(1.0)
        with pytest.raises(ModelError):
            ModelSpec(a=a, g=a, delta1=0.3, delta2=0.1, sigma=0.1)
        with pytest.raises(ModelError):
            ModelSpec(a=a, g=a, delta1=0.1, delta2=1.0, sigma=0.1)

    def test_sigma_must_be_positive(self):
        a = PeriodicFunction.constant(1.0)
        with pytest.raises(ModelError):
            ModelSpec(a=a, g=a, delta1=0.1, delta2=0.3, sigma=0.0)

    def test_periods_must_agree(self):
        with pytest.raises(ModelError):
            ModelSpec(a=PeriodicFunction.constant(1.0, 1.0), g=PeriodicFunction.constant(1.0, 2.0),
                      delta1=0.1, delta2=0.3, sigma=0.1)

    def test_lambda_t(self, reference_spec):
        assert reference_spec.lam == 1.0
        assert reference_spec.lambdaT == 1.0
        assert reference_spec.with_period(2.0).lambdaT == 2.0

    def test_with_sigma_keeps_coefficients(self, reference_spec):
        other = reference_spec.with_sigma(0.1)
        assert other.sigma == 0.1
        assert other.g == reference_spec.g


class TestVStar:
    """Tests for v* and its extrema."""

    def test_constant_v_star(self, constant_spec):
        np.testing.assert_allclose(v_star(constant_spec, [0.0, 0.5]), [0.5, 0.5])

    def test_extrema_of_reference(self, reference_spec):
        hi, lo = v_star_extrema(reference_spec)
        assert hi.t == pytest.approx(0.0, abs=1e-6) or hi.t == pytest.approx(1.0, abs=1e-6)
        assert hi.value == pytest.approx(3.0 ** 2 / 2.0, rel=1e-10)
        assert lo.t == pytest.approx(0.5, abs=1e-6)
        assert lo.value == pytest.approx(2.0 ** 2 / 2.0, rel=1e-10)

    def test_count_extrema(self):
        x = np.linspace(0, 1, 256, endpoint=False)
        assert count_extrema(np.cos(2 * np.pi * x)) == (1, 1)
        assert count_extrema(np.cos(4 * np.pi * x)) == (2, 2)
        assert count_extrema(np.ones(16)) == (0, 0)


class TestHypotheses:
    """Tests for the hypothesis checker."""

    def test_reference_scenario_passes(self, reference_spec):
        report = check_hypotheses(reference_spec)
        assert report.h1.passed
        assert report.h2.passed
        assert report.h3.passed
        assert report.h4.passed
        assert report.h5_weak.passed
        assert 0 < report.Delta < 1
        assert report.Delta0 == pytest.approx(delta0(report.Delta, 0.1, 0.3))

    def test_constant_scenario_is_degenerate(self, constant_spec):
        report = check_hypotheses(constant_spec)
        assert report.h1.passed
        assert not report.h2.passed
        assert not report.h5.passed
        assert "H2" in report.failures()
        assert not report.all_passed

    def test_h1_failure_short_circuits(self):
        spec = ModelSpec(
            a=PeriodicFunction(1.0, 0.5, cos=(1.0,)),
            g=PeriodicFunction.constant(1.0),
            delta1=0.1, delta2=0.3, sigma=0.1,
        )
        report = check_hypotheses(spec)
        assert not report.h1.passed
        assert "a(t)" in report.h1.detail
        assert math.isnan(report.Delta)
        assert all(not c.passed for c in report.checks)

    def test_h4_fails_for_wide_levels(self):
        spec = ModelSpec(
            a=PeriodicFunction.constant(1.0),
            g=PeriodicFunction(1.0, 1.0, cos=(0.9,)),
            delta1=0.1, delta2=0.95, sigma=0.1,
        )
        # 0.95 / 1.05 > sqrt(0.1^2 / 1.9^2)
        assert not check_hypotheses(spec).h4.passed

    def test_delta0(self):
        assert delta0(0.2, 0.1, 0.3) == pytest.approx(0.25)
        assert delta0(0.9, 0.1, 0.3) == pytest.approx(1.0)
        assert delta0(0.9, 0.1, 0.15) == pytest.approx(0.5)
