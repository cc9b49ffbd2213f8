"""
CyclingLab Coefficients

T-periodic coefficients a(t), g(t) as finite trigonometric series, their
exact antiderivatives, the model specification, and the hypothesis checker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import minimize_scalar

from .errors import ModelError
from .observability import get_logger

logger = get_logger("coefficients")


# =============================================================================
# PERIODIC FUNCTIONS
# =============================================================================

@dataclass(frozen=True)
class PeriodicFunction:
    """
    f(t) = mean + sum_k cos[k-1] cos(2 pi k t/T) + sin[k-1] sin(2 pi k t/T).

    cos and sin are parallel arrays indexed by harmonic k = 1, 2, ...;
    the shorter one is padded with zeros.
    """
    period: float
    mean: float
    cos: tuple[float, ...] = ()
    sin: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.period > 0:
            raise ModelError(f"period must be positive, got {self.period}")
        n = max(len(self.cos), len(self.sin))
        object.__setattr__(self, "cos", tuple(float(c) for c in self.cos) + (0.0,) * (n - len(self.cos)))
        object.__setattr__(self, "sin", tuple(float(s) for s in self.sin) + (0.0,) * (n - len(self.sin)))
        object.__setattr__(self, "mean", float(self.mean))

    @classmethod
    def constant(cls, value: float, period: float = 1.0) -> "PeriodicFunction":
        return cls(period, value)

    @property
    def harmonics(self) -> list[tuple[int, float, float]]:
        """(k, cos-amplitude, sin-amplitude) for every stored harmonic."""
        return [(k + 1, c, s) for k, (c, s) in enumerate(zip(self.cos, self.sin))]

    @property
    def is_constant(self) -> bool:
        return not any(self.cos) and not any(self.sin)

    def with_period(self, period: float) -> "PeriodicFunction":
        """Same shape on a new period: f_T(t) = f(t T0 / T)."""
        return replace(self, period=period)

    def _phases(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = np.arange(1, len(self.cos) + 1)
        # Reduce modulo T so the phase stays accurate for large t
        tau = np.mod(t, self.period)
        return k, 2.0 * np.pi * np.multiply.outer(tau, k) / self.period

    def __call__(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.is_constant:
            return np.full(t.shape, self.mean)
        _, phase = self._phases(t)
        return self.mean + np.cos(phase) @ np.array(self.cos) + np.sin(phase) @ np.array(self.sin)

    def derivative(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.is_constant:
            return np.zeros(t.shape)
        k, phase = self._phases(t)
        w = 2.0 * np.pi * k / self.period
        return np.sin(phase) @ (-w * np.array(self.cos)) + np.cos(phase) @ (w * np.array(self.sin))

    def antiderivative(self, t: ArrayLike) -> np.ndarray:
        """Exact integral from 0 to t."""
        t = np.asarray(t, dtype=float)
        if self.is_constant:
            return self.mean * t
        k, phase = self._phases(t)
        scale = self.period / (2.0 * np.pi * k)
        periodic = np.sin(phase) @ (scale * np.array(self.cos)) + (1.0 - np.cos(phase)) @ (
            scale * np.array(self.sin)
        )
        return self.mean * t + periodic


def evaluate(f: PeriodicFunction, t: ArrayLike) -> np.ndarray:
    """Value of f at t."""
    return f(t)


def alpha(a: PeriodicFunction, t: ArrayLike) -> np.ndarray:
    """alpha(t) = integral of a from 0 to t."""
    return a.antiderivative(t)


def alpha2(a: PeriodicFunction, t: ArrayLike, s: ArrayLike) -> np.ndarray:
    """alpha(t, s) = alpha(t) - alpha(s)."""
    return a.antiderivative(t) - a.antiderivative(s)


def lyapunov(a: PeriodicFunction) -> float:
    """lambda = alpha(T)/T, the mean of a."""
    lam = a.mean
    if not lam > 0:
        raise ModelError(f"Lyapunov exponent must be positive, got {lam}")
    return lam


# =============================================================================
# MODEL SPECIFICATION
# =============================================================================

@dataclass(frozen=True)
class ModelSpec:
    """Coefficients, switching levels and noise intensity of one scenario."""
    a: PeriodicFunction
    g: PeriodicFunction
    delta1: float
    delta2: float
    sigma: float

    def __post_init__(self) -> None:
        if not math.isclose(self.a.period, self.g.period, rel_tol=1e-14):
            raise ModelError(f"a and g must share the period: {self.a.period} != {self.g.period}")
        if not 0.0 < self.delta1 < self.delta2 < 1.0:
            raise ModelError(
                f"levels must satisfy 0 < delta1 < delta2 < 1, got {self.delta1}, {self.delta2}"
            )
        if not self.sigma > 0:
            raise ModelError(f"sigma must be positive, got {self.sigma}")

    @property
    def period(self) -> float:
        return self.a.period

    @property
    def lam(self) -> float:
        return lyapunov(self.a)

    @property
    def lambdaT(self) -> float:
        return self.lam * self.period

    def with_sigma(self, sigma: float) -> "ModelSpec":
        return replace(self, sigma=sigma)

    def with_period(self, period: float) -> "ModelSpec":
        return replace(self, a=self.a.with_period(period), g=self.g.with_period(period))

    def grid(self, n: int) -> np.ndarray:
        """n equispaced points covering [0, T)."""
        return np.arange(n) * (self.period / n)


def v_star(spec: ModelSpec, t: ArrayLike) -> np.ndarray:
    """v*(t) = g(t)^2 / 2a(t)."""
    a = spec.a(t)
    if np.any(a <= 0):
        raise ModelError("a(t) must be positive wherever v* is evaluated")
    return spec.g(t) ** 2 / (2.0 * a)


# =============================================================================
# EXTREMA ON A PERIODIC GRID
# =============================================================================

@dataclass(frozen=True)
class Extremum:
    t: float
    value: float


def count_extrema(values: np.ndarray, rtol: float = 1e-12) -> tuple[int, int]:
    """Number of (maxima, minima) of a periodic sampled function."""
    diff = np.roll(values, -1) - values
    scale = max(float(np.max(np.abs(values))), 1e-300)
    signs = np.sign(np.where(np.abs(diff) <= rtol * scale, 0.0, diff))
    signs = signs[signs != 0]
    if signs.size == 0:
        return 0, 0
    changes = signs - np.roll(signs, 1)
    # -2: rising then falling (a maximum), +2: a minimum
    return int(np.sum(changes == -2)), int(np.sum(changes == 2))


def refine_minimum(
    f: Callable[[float], float],
    grid: np.ndarray,
    index: int,
    period: float,
    xtol: float = 1e-10,
) -> Extremum:
    """
    Golden-section refinement of a grid minimum of a T-periodic function.

    The search runs one period to the right so the relative tolerance of
    the golden section acts on an abscissa bounded away from zero.
    """
    n = grid.size
    h = period / n
    centre = grid[index] + period
    bracket = (centre - h, centre, centre + h)
    try:
        res = minimize_scalar(lambda x: float(f(x)), bracket=bracket, method="golden",
                              options={"xtol": xtol})
        t_min = float(np.mod(res.x, period))
        value = float(res.fun)
    except ValueError:
        # Flat neighbourhood: the grid point is as good as it gets
        t_min, value = float(grid[index]), float(f(grid[index]))
    if value > float(f(grid[index])):
        t_min, value = float(grid[index]), float(f(grid[index]))
    return Extremum(t_min, value)


def v_star_extrema(spec: ModelSpec, n_grid: Optional[int] = None) -> tuple[Extremum, Extremum]:
    """(maximum, minimum) of v* over one period, grid scan + golden refinement."""
    from .config import get_settings

    num = get_settings().numerics
    n_grid = n_grid or num.grid_points
    grid = spec.grid(n_grid)
    values = v_star(spec, grid)
    lo = refine_minimum(lambda x: v_star(spec, x), grid, int(np.argmin(values)),
                        spec.period, num.golden_tol)
    hi = refine_minimum(lambda x: -v_star(spec, x), grid, int(np.argmax(values)),
                        spec.period, num.golden_tol)
    return Extremum(hi.t, -hi.value), lo


# =============================================================================
# HYPOTHESES
# =============================================================================

@dataclass(frozen=True)
class HypothesisCheck:
    """Outcome of one hypothesis with the point that decided it."""
    name: str
    passed: bool
    detail: str
    witness_t: Optional[float] = None
    witness_value: Optional[float] = None


@dataclass(frozen=True)
class HypothesisReport:
    h1: HypothesisCheck
    h2: HypothesisCheck
    h3: HypothesisCheck
    h4: HypothesisCheck
    h5: HypothesisCheck
    h5_weak: HypothesisCheck
    Delta: float
    Delta0: float
    vbar: float
    vunder: float
    t_vbar: float = 0.0
    t_vunder: float = 0.0
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def checks(self) -> list[HypothesisCheck]:
        return [self.h1, self.h2, self.h3, self.h4, self.h5, self.h5_weak]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in (self.h1, self.h2, self.h3, self.h4, self.h5))

    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


def delta0(Delta: float, delta1: float, delta2: float) -> float:
    """Delta0 = min(Delta/(1-Delta), (delta2-delta1)/delta1, 1)."""
    return min(Delta / (1.0 - Delta), (delta2 - delta1) / delta1, 1.0)


def check_hypotheses(spec: ModelSpec, n_grid: Optional[int] = None) -> HypothesisReport:
    """
    Evaluate H1-H5 on a dense grid. Failures are reported, never raised.

    H5 is reported twice: the strict form (exactly one quadratic minimum of
    the rate function per period) and the weak form (the deepest minimum is
    quadratic).
    """
    from .config import get_settings
    from .variances import rho_per_sq, v_hat_per_plus, v_per_minus

    num = get_settings().numerics
    n_grid = n_grid or num.grid_points
    grid = spec.grid(n_grid)
    a_vals, g_vals = spec.a(grid), spec.g(grid)

    # H1: positivity (smoothness is structural)
    ia, ig = int(np.argmin(a_vals)), int(np.argmin(g_vals))
    if a_vals[ia] <= 0:
        h1 = HypothesisCheck("H1", False, "a(t) is not positive", grid[ia], a_vals[ia])
    elif g_vals[ig] <= 0:
        h1 = HypothesisCheck("H1", False, "g(t) is not positive", grid[ig], g_vals[ig])
    else:
        h1 = HypothesisCheck("H1", True, "a and g positive", grid[ia], a_vals[ia])

    if not h1.passed:
        logger.warning("hypothesis_failed", hypothesis="H1", t=h1.witness_t)
        bad = HypothesisCheck("H?", False, "not evaluated: H1 failed")
        return HypothesisReport(
            h1=h1,
            h2=replace(bad, name="H2"), h3=replace(bad, name="H3"), h4=replace(bad, name="H4"),
            h5=replace(bad, name="H5"), h5_weak=replace(bad, name="H5w"),
            Delta=float("nan"), Delta0=float("nan"), vbar=float("nan"), vunder=float("nan"),
        )

    # H2: v* has exactly one maximum and one minimum
    vs = v_star(spec, grid)
    n_max, n_min = count_extrema(vs)
    hi, lo = v_star_extrema(spec, n_grid)
    h2 = HypothesisCheck(
        "H2", n_max == 1 and n_min == 1,
        f"v* has {n_max} maxima and {n_min} minima per period", hi.t, hi.value,
    )

    # H3: both periodic variances stay below 2 v* (1 - Delta)
    ratio = np.maximum(v_per_minus(spec, grid), v_hat_per_plus(spec, grid)) / (2.0 * vs)
    i3 = int(np.argmax(ratio))
    Delta = 1.0 - float(ratio[i3])
    h3 = HypothesisCheck(
        "H3", Delta > 0, f"largest admissible Delta = {Delta:.6g}", grid[i3], float(ratio[i3]),
    )
    D0 = delta0(Delta, spec.delta1, spec.delta2) if h3.passed else float("nan")

    # H4: delta2/(2 - delta2) <= sqrt(vunder/vbar)
    lhs = spec.delta2 / (2.0 - spec.delta2)
    rhs = math.sqrt(lo.value / hi.value)
    h4 = HypothesisCheck("H4", lhs <= rhs, f"{lhs:.6g} <= {rhs:.6g}", None, lhs - rhs)

    # H5: rate function has one quadratic minimum
    rho2 = rho_per_sq(spec, grid)
    _, n_rho_min = count_extrema(rho2)
    from .variances import rate_second_derivative

    i5 = int(np.argmin(rho2))
    dd = rate_second_derivative(spec, float(grid[i5]))
    scale = float(np.max(np.abs(rho2))) / spec.period ** 2
    quadratic = dd > num.quadratic_tol * scale
    h5 = HypothesisCheck(
        "H5", n_rho_min == 1 and quadratic,
        f"rho_per^2 has {n_rho_min} minima per period, second derivative {dd:.6g}",
        grid[i5], float(rho2[i5]),
    )
    h5_weak = HypothesisCheck(
        "H5w", n_rho_min >= 1 and quadratic,
        "deepest minimum of rho_per^2 is quadratic" if quadratic else "deepest minimum is flat",
        grid[i5], dd,
    )

    report = HypothesisReport(
        h1=h1, h2=h2, h3=h3, h4=h4, h5=h5, h5_weak=h5_weak,
        Delta=Delta, Delta0=D0, vbar=hi.value, vunder=lo.value, t_vbar=hi.t, t_vunder=lo.t,
    )
    for name in report.failures():
        logger.info("hypothesis_failed", hypothesis=name)
    return report
