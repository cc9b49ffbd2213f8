"""
Tests for CyclingLab Volterra Solver
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.coefficients import ModelSpec, PeriodicFunction
from src.errors import GridError
from src.volterra import (
    ContractionConstants,
    LegSurface,
    boundary_coeffs,
    check_first_kind,
    constant_boundary_density,
    constant_boundary_problem,
    contraction_epsilon,
    estimate_constants,
    fixed_point_prefactor,
    polynomial_problem,
    psi_down_problem,
    psi_minus_problem,
    psi_up_problem,
    solve_second_kind,
    transition_density,
)


@pytest.fixture
def reference_spec():
    return ModelSpec(
        a=PeriodicFunction(1.0, 1.0),
        g=PeriodicFunction(1.0, 2.5, cos=(0.5,)),
        delta1=0.1, delta2=0.3, sigma=0.35,
    )


@pytest.fixture
def curved_problem():
    """Accelerating variance against a linear level: the kernel does not vanish."""
    return polynomial_problem([0.0, 1.0, 0.5], [1.0, 0.5], sigma=0.5)


class TestProblem:
    """Tests for problem construction and coefficients."""

    def test_sigma_must_be_positive(self):
        with pytest.raises(GridError):
            constant_boundary_problem(sigma=0.0)

    def test_with_sigma(self):
        p = constant_boundary_problem(1.0, 1.0).with_sigma(0.2)
        assert p.sigma == 0.2
        assert p.name == "constant-boundary"

    def test_transition_density_is_gaussian(self):
        p = constant_boundary_problem(sigma=0.5)
        value = transition_density(p, 2.0, 1.0, 1.0, 0.0)
        expected = math.exp(-1.0 / (2 * 0.25)) / (0.5 * math.sqrt(2 * math.pi))
        assert float(value) == pytest.approx(expected, rel=1e-14)

    def test_kernel_vanishes_on_diagonal(self, curved_problem):
        t = 1.5
        s = t - np.array([1e-3, 1e-5])
        co = boundary_coeffs(curved_problem, t, s)
        assert abs(co.b_tilde[1]) < abs(co.b_tilde[0]) < 1e-2
        assert co.r[1] < co.r[0] < 1e-2

    def test_grid_rejects_bad_boundary(self):
        p = polynomial_problem([0.0, 1.0], [-0.5, 1.0], sigma=1.0)
        with pytest.raises(GridError):
            solve_second_kind(p, 1.0, 100)


class TestOracles:
    """Boundaries with closed-form passage densities."""

    def test_constant_boundary(self):
        p = constant_boundary_problem(1.0, 1.0)
        sol = solve_second_kind(p, 5.0, 2000)
        keep = sol.grid >= 0.05
        exact = constant_boundary_density(sol.grid[keep])
        assert np.max(np.abs(sol.psi[keep] / exact - 1.0)) <= 1e-3

    def test_linear_boundary(self):
        # Bachelier-Levy: a / (sigma sqrt(2 pi t^3)) exp(-(a + b t)^2 / 2 sigma^2 t)
        a, b, sigma = 1.0, 0.5, 0.5
        p = polynomial_problem([0.0, 1.0], [a, b], sigma=sigma)
        sol = solve_second_kind(p, 4.0, 800)
        t = sol.grid
        exact = a / (sigma * np.sqrt(2 * np.pi * t ** 3)) * np.exp(-(a + b * t) ** 2 / (2 * sigma ** 2 * t))
        keep = t >= 0.1
        np.testing.assert_allclose(sol.psi[keep], exact[keep], rtol=1e-9)

    def test_sigma_scaling_of_oracle(self):
        t = np.array([0.5, 1.0, 2.0])
        np.testing.assert_allclose(
            constant_boundary_density(t, 1.0, 0.5), 0.25 * constant_boundary_density(0.25 * t, 1.0, 1.0)
        )


class TestSecondKind:
    """Tests for the second-kind solver on a curved problem."""

    def test_positive_with_mass_below_one(self, curved_problem):
        sol = solve_second_kind(curved_problem, 3.0, 1000)
        assert np.all(sol.psi >= 0)
        assert 0 < sol.mass <= 1.0
        assert sol.halving_change is not None and sol.halving_change < 1e-2

    def test_first_kind_identity(self, curved_problem):
        sol = solve_second_kind(curved_problem, 3.0, 1000)
        report = check_first_kind(curved_problem, sol)
        assert report.sup_relative < 1e-2
        assert sol.residual is report

    def test_first_kind_identity_for_oracle(self):
        p = constant_boundary_problem(1.0, 1.0)
        sol = solve_second_kind(p, 5.0, 1000)
        assert check_first_kind(p, sol).sup_relative < 1e-4

    def test_deviation_bound_vanishes_for_constant_boundary(self):
        sol = solve_second_kind(constant_boundary_problem(), 2.0, 200)
        np.testing.assert_allclose(sol.deviation_bound, 0.0, atol=1e-12)
        np.testing.assert_allclose(sol.c, sol.c0, rtol=1e-12)

    def test_to_density(self):
        sol = solve_second_kind(constant_boundary_problem(), 2.0, 200)
        grid = sol.to_density(offset=1.0)
        assert grid.meta == "volterra"
        assert grid.times[0] == pytest.approx(1.0 + 2.0 / 200)


class TestFixedPoint:
    """Tests for the contraction constants and the bracket."""

    def test_epsilon_formula(self):
        consts = ContractionConstants(Delta=1.0, M1=1.0, M2=1.0, M3=1.0)
        eps = float(contraction_epsilon(consts, 0.1, 1.0))
        assert eps == pytest.approx(2.0 * (10.0 * math.exp(-25.0) + 0.4), rel=1e-12)

    def test_constant_boundary_constants(self):
        consts = estimate_constants(constant_boundary_problem(), 4.0, 400)
        assert consts.Delta == pytest.approx(1.0 / 3.0, rel=1e-12)
        assert consts.M1 == 0.0

    def test_fixed_point_matches_second_kind(self, curved_problem):
        sol = solve_second_kind(curved_problem, 2.0, 400, halving_check=False)
        fp = fixed_point_prefactor(curved_problem, 2.0, 400)
        assert fp.converged
        np.testing.assert_allclose(fp.c, sol.c, rtol=1e-8)

    def test_bracket_contains_solution(self, curved_problem):
        p = curved_problem.with_sigma(0.05)
        fp = fixed_point_prefactor(p, 2.0, 400)
        defined = np.isfinite(fp.bracket_lo)
        assert np.all(fp.bracket_lo[defined] <= fp.c[defined] * (1 + 1e-12))
        assert np.all(fp.c[defined] <= fp.bracket_hi[defined] * (1 + 1e-12))

    def test_violated_constants_leave_bracket_undefined(self, curved_problem):
        bad = ContractionConstants(Delta=10.0, M1=1e-9, M2=1e-9, M3=1e-9)
        fp = fixed_point_prefactor(curved_problem, 2.0, 200, constants=bad)
        assert not fp.conditions_ok
        assert np.all(np.isnan(fp.bracket_lo))
        assert any("violate" in note for note in fp.notes)


class TestModelProblems:
    """Problems built from the switching model."""

    def test_psi_minus_problem(self, reference_spec):
        p = psi_minus_problem(reference_spec)
        assert p.name == "model-psi-minus"
        assert float(p.d(0.0)) == pytest.approx(2.0 - reference_spec.delta1)
        sol = solve_second_kind(p, 4.0, 800)
        assert 0 < sol.mass <= 1.0

    def test_leg_problems_start_between_levels(self, reference_spec):
        up = psi_up_problem(reference_spec, 0.3)
        down = psi_down_problem(reference_spec, 0.3)
        gap = reference_spec.delta2 - reference_spec.delta1
        assert float(up.d(0.0)) == pytest.approx(gap)
        assert float(down.d(0.0)) == pytest.approx(gap)
        assert float(up.v(0.0)) == pytest.approx(0.0, abs=1e-15)
        assert float(down.v(0.0)) == pytest.approx(0.0, abs=1e-15)


@pytest.fixture(scope="module")
def leg_surfaces():
    spec = ModelSpec(
        a=PeriodicFunction(1.0, 1.0),
        g=PeriodicFunction(1.0, 2.5, cos=(0.5,)),
        delta1=0.1, delta2=0.3, sigma=0.35,
    )
    return spec, {
        leg: LegSurface.build(spec, leg, 0.3, 1.3, n_starts=17, degree=32, step=1.0 / 128.0)
        for leg in ("up", "down")
    }


def _direct_leg(spec, leg, start, t):
    problem = (psi_up_problem if leg == "up" else psi_down_problem)(spec, start)
    horizon = t - start
    n = max(128, math.ceil(horizon * 128))
    return solve_second_kind(problem, horizon, n, halving_check=False)


class TestLegSurface:
    """Renewal legs evaluated anywhere on the triangle s <= v < u <= t."""

    def test_zero_below_diagonal(self, leg_surfaces):
        _, legs = leg_surfaces
        u = np.array([0.3, 0.5, 0.8, 1.0])
        v = np.array([0.3, 0.7, 0.8, 1.2])
        for surface in legs.values():
            np.testing.assert_array_equal(surface(u, v), 0.0)

    def test_broadcasts_to_a_grid(self, leg_surfaces):
        _, legs = leg_surfaces
        u = np.linspace(0.3, 1.3, 7)
        values = legs["up"](u[:, None], u[None, :])
        assert values.shape == (7, 7)
        assert np.all(values >= 0)
        assert np.all(np.triu(values) == 0)

    def test_matches_volterra_at_a_start(self, leg_surfaces):
        spec, legs = leg_surfaces
        surface = legs["up"]
        start = float(surface.starts[3])
        sol = _direct_leg(spec, "up", start, 1.3)
        keep = sol.psi >= 1e-2 * sol.psi.max()
        np.testing.assert_allclose(surface(start + sol.grid[keep], start), sol.psi[keep], rtol=1e-3)

    def test_interpolates_between_starts(self, leg_surfaces):
        spec, legs = leg_surfaces
        surface = legs["down"]
        start = 0.5 * float(surface.starts[5] + surface.starts[6])
        sol = _direct_leg(spec, "down", start, 1.3)
        keep = sol.psi >= 1e-2 * sol.psi.max()
        np.testing.assert_allclose(surface(start + sol.grid[keep], start), sol.psi[keep], rtol=1e-2)

    def test_unknown_leg(self, leg_surfaces):
        spec, _ = leg_surfaces
        with pytest.raises(ValueError):
            LegSurface.build(spec, "sideways", 0.3, 1.3)
