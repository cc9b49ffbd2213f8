"""
CyclingLab Variances

Variance functions of the two linear branches and their periodic
solutions, the rate function rho_per and its minimum, intrinsic time
theta(t), and the constants C0, C, gamma0, gamma(t).

Every evaluation function accepts scalars or arrays and broadcasts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Literal, Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy.interpolate import CubicSpline

from .coefficients import ModelSpec, refine_minimum, v_star
from .config import get_settings
from .errors import DegenerateMinimumError, QuadratureError
from .observability import get_logger

logger = get_logger("variances")

Method = Literal["auto", "relation", "direct"]

# Integrand(x, rows): x has one row of nodes per requested integral, rows
# holds the flat indices of those integrals (for per-integral parameters).
Integrand = Callable[[np.ndarray, np.ndarray], np.ndarray]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_NODES_PER_CHUNK = 2_000_000


# =============================================================================
# QUADRATURE
# =============================================================================

def _panel_rule(f: Integrand, lo: np.ndarray, hi: np.ndarray, rows: np.ndarray,
                panels: int) -> np.ndarray:
    width = (hi - lo) / panels
    starts = lo[:, None] + width[:, None] * np.arange(panels)
    x = starts[:, :, None] + (0.5 * width)[:, None, None] * (_GL_NODES + 1.0)
    values = f(x.reshape(lo.size, -1), rows).reshape(lo.size, panels, _GL_NODES.size)
    return 0.5 * width * (values @ _GL_WEIGHTS).sum(axis=1)


def _chunked_rule(f: Integrand, lo: np.ndarray, hi: np.ndarray, rows: np.ndarray,
                  panels: int) -> np.ndarray:
    chunk = max(1, _NODES_PER_CHUNK // (panels * _GL_NODES.size))
    out = np.empty(rows.size)
    for start in range(0, rows.size, chunk):
        sl = slice(start, start + chunk)
        out[sl] = _panel_rule(f, lo[sl], hi[sl], rows[sl], panels)
    return out


def integrate(f: Integrand, lo: ArrayLike, hi: ArrayLike, rtol: Optional[float] = None) -> np.ndarray:
    """
    Composite 16-point Gauss-Legendre quadrature of many integrals at once.

    Panel counts double from quad_min_panels until two successive values
    agree to rtol; integrals that converge drop out of the loop.

    Raises:
        QuadratureError: when quad_max_panels is exceeded or values are not finite
    """
    num = get_settings().numerics
    rtol = num.quad_rtol if rtol is None else rtol
    lo_b, hi_b = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    shape = lo_b.shape
    lo_f, hi_f = lo_b.ravel(), hi_b.ravel()
    if not (np.all(np.isfinite(lo_f)) and np.all(np.isfinite(hi_f))):
        raise QuadratureError("integration limits must be finite")

    result = np.empty(lo_f.size)
    active = np.arange(lo_f.size)
    panels = num.quad_min_panels
    previous = _chunked_rule(f, lo_f, hi_f, active, panels)
    while active.size:
        panels *= 2
        if panels > num.quad_max_panels:
            raise QuadratureError(
                f"quadrature did not reach rtol={rtol:g} with {num.quad_max_panels} panels "
                f"({active.size} integrals unconverged)"
            )
        current = _chunked_rule(f, lo_f[active], hi_f[active], active, panels)
        if not np.all(np.isfinite(current)):
            raise QuadratureError("non-finite integrand value")
        done = np.abs(current - previous) <= rtol * np.abs(current) + 1e-300
        result[active[done]] = current[done]
        active, previous = active[~done], current[~done]
    return result.reshape(shape)


def _flat(*arrays: ArrayLike) -> tuple[tuple[int, ...], list[np.ndarray]]:
    b = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in arrays))
    return b[0].shape, [x.ravel() for x in b]


def _check_nonnegative(values: np.ndarray, scale: np.ndarray, what: str) -> np.ndarray:
    tol = 1e-9 * np.maximum(np.abs(scale), 1e-300)
    if np.any(values < -tol):
        raise QuadratureError(f"{what} is negative beyond tolerance: min {float(np.min(values)):.3e}")
    return np.maximum(values, 0.0)


def _ordered(later: np.ndarray, earlier: np.ndarray, names: str) -> None:
    if np.any(later < earlier):
        raise ValueError(f"{names} requires the first time argument to be >= the second")


# =============================================================================
# PERIODIC SOLUTIONS
# =============================================================================

def v_per_minus(spec: ModelSpec, t: ArrayLike) -> np.ndarray:
    """Periodic solution of v' = -2a v + g^2."""
    shape, (tt,) = _flat(t)
    A, g = spec.a.antiderivative, spec.g
    end = tt + spec.period
    end_alpha = A(end)

    def integrand(x: np.ndarray, rows: np.ndarray) -> np.ndarray:
        return np.exp(-2.0 * (end_alpha[rows, None] - A(x))) * g(x) ** 2

    return (integrate(integrand, tt, end) / -math.expm1(-2.0 * spec.lambdaT)).reshape(shape)


def v_hat_per_plus(spec: ModelSpec, t: ArrayLike) -> np.ndarray:
    """Periodic solution of v' = 2a v - g^2."""
    shape, (tt,) = _flat(t)
    A, g = spec.a.antiderivative, spec.g
    start_alpha = A(tt)

    def integrand(x: np.ndarray, rows: np.ndarray) -> np.ndarray:
        return np.exp(-2.0 * (A(x) - start_alpha[rows, None])) * g(x) ** 2

    return (integrate(integrand, tt, tt + spec.period) / -math.expm1(-2.0 * spec.lambdaT)).reshape(shape)


# =============================================================================
# TWO-TIME VARIANCES
# =============================================================================

def _use_direct(method: Method, span: np.ndarray, period: float) -> np.ndarray:
    if method == "direct":
        return np.ones(span.shape, dtype=bool)
    if method == "relation":
        return np.zeros(span.shape, dtype=bool)
    # The periodic relation cancels badly over short spans
    return span < 0.25 * period


def v_minus(spec: ModelSpec, t: ArrayLike, t0: ArrayLike, method: Method = "auto") -> np.ndarray:
    """
    v_-(t, t0) = integral over [t0, t] of exp(-2 alpha(t, s)) g(s)^2 ds.

    "relation" uses v_per_minus(t) - exp(-2 alpha(t, t0)) v_per_minus(t0),
    "direct" integrates, "auto" picks direct quadrature for short spans.
    """
    shape, (tt, ss) = _flat(t, t0)
    _ordered(tt, ss, "v_minus")
    A, g = spec.a.antiderivative, spec.g
    out = np.empty(tt.size)
    direct = _use_direct(method, tt - ss, spec.period)

    if np.any(direct):
        td, sd = tt[direct], ss[direct]
        end_alpha = A(td)

        def integrand(x: np.ndarray, rows: np.ndarray) -> np.ndarray:
            return np.exp(-2.0 * (end_alpha[rows, None] - A(x))) * g(x) ** 2

        out[direct] = integrate(integrand, sd, td)
    if not np.all(direct):
        tr, sr = tt[~direct], ss[~direct]
        vt = v_per_minus(spec, tr)
        out[~direct] = _check_nonnegative(
            vt - np.exp(-2.0 * (A(tr) - A(sr))) * v_per_minus(spec, sr), vt, "v_minus"
        )
    return out.reshape(shape)


def v_hat_plus(spec: ModelSpec, t: ArrayLike, s: ArrayLike, method: Method = "auto") -> np.ndarray:
    """v^_+(t, s) = integral over [s, t] of exp(-2 alpha(u, s)) g(u)^2 du."""
    shape, (tt, ss) = _flat(t, s)
    _ordered(tt, ss, "v_hat_plus")
    A, g = spec.a.antiderivative, spec.g
    out = np.empty(tt.size)
    direct = _use_direct(method, tt - ss, spec.period)

    if np.any(direct):
        td, sd = tt[direct], ss[direct]
        start_alpha = A(sd)

        def integrand(x: np.ndarray, rows: np.ndarray) -> np.ndarray:
            return np.exp(-2.0 * (A(x) - start_alpha[rows, None])) * g(x) ** 2

        out[direct] = integrate(integrand, sd, td)
    if not np.all(direct):
        tr, sr = tt[~direct], ss[~direct]
        vs = v_hat_per_plus(spec, sr)
        out[~direct] = _check_nonnegative(
            vs - np.exp(-2.0 * (A(tr) - A(sr))) * v_hat_per_plus(spec, tr), vs, "v_hat_plus"
        )
    return out.reshape(shape)


def v_plus(spec: ModelSpec, t: ArrayLike, s: ArrayLike, method: Method = "auto") -> np.ndarray:
    """v_+(t, s) = exp(2 alpha(t, s)) v^_+(t, s)."""
    A = spec.a.antiderivative
    return np.exp(2.0 * (A(t) - A(s))) * v_hat_plus(spec, t, s, method)


# =============================================================================
# RATE FUNCTION
# =============================================================================

def rho_per_sq(spec: ModelSpec, t: ArrayLike) -> np.ndarray:
    """rho_per(t)^2 = delta1^2 / v^_per(t) + (2 - delta1)^2 / v_per(t)."""
    d1 = spec.delta1
    return d1 ** 2 / v_hat_per_plus(spec, t) + (2.0 - d1) ** 2 / v_per_minus(spec, t)


def rho_per(spec: ModelSpec, t: ArrayLike) -> np.ndarray:
    return np.sqrt(rho_per_sq(spec, t))


def rate_second_derivative(spec: ModelSpec, s: float, step: Optional[float] = None) -> float:
    """Second derivative of rho_per^2 at s: central differences, one Richardson step."""
    h = step if step is not None else spec.period * get_settings().numerics.fd_step
    x = s + np.array([-h, -0.5 * h, 0.0, 0.5 * h, h])
    f = rho_per_sq(spec, x)
    coarse = (f[4] - 2.0 * f[2] + f[0]) / h ** 2
    fine = (f[3] - 2.0 * f[2] + f[1]) / (0.5 * h) ** 2
    return float((4.0 * fine - coarse) / 3.0)


@dataclass(frozen=True)
class RateReport:
    """Analytic quantities derived from the minimum of the rate function."""
    lam: float
    period: float
    s_star: float
    R: float
    rho_dd: float
    C0: float
    C: float
    gamma0: float
    theta0: float
    v_hat_star: float
    v_minus_star: float
    v_minus_zero: float
    alpha_star: float
    ties: tuple[float, ...] = ()

    @property
    def lambdaT(self) -> float:
        return self.lam * self.period

    @property
    def R_sq(self) -> float:
        return self.R ** 2

    @property
    def weak(self) -> bool:
        """True when several minima tie and the smallest s* was chosen."""
        return len(self.ties) > 1


def find_rate_minimum(spec: ModelSpec, n_grid: Optional[int] = None) -> RateReport:
    """
    Locate s* = argmin rho_per^2 over one period and fill the rate report.

    Raises:
        DegenerateMinimumError: flat rate function or non-quadratic minimum
    """
    num = get_settings().numerics
    T = spec.period
    grid = spec.grid(n_grid or num.grid_points)
    rho2 = rho_per_sq(spec, grid)
    scale = float(np.max(np.abs(rho2)))
    if float(np.ptp(rho2)) <= num.quadratic_tol * scale:
        raise DegenerateMinimumError("rate function is constant over the period", 0.0)

    def f(x: float) -> float:
        return float(rho_per_sq(spec, x))

    local = np.flatnonzero((rho2 <= np.roll(rho2, 1)) & (rho2 < np.roll(rho2, -1)))
    refined = [refine_minimum(f, grid, int(i), T, num.golden_tol) for i in local]
    best = min(e.value for e in refined)
    ties = tuple(sorted(e.t for e in refined if e.value - best <= num.tie_tol * abs(best)))
    s_star = ties[0]
    if len(ties) > 1:
        logger.warning("rate_minimum_tie", minima=list(ties), chosen=s_star)

    dd = rate_second_derivative(spec, s_star)
    if dd <= num.quadratic_tol * scale / T ** 2:
        raise DegenerateMinimumError(
            f"minimum of the rate function at s*={s_star:.6g} is not quadratic", dd
        )

    d1 = spec.delta1
    vh = float(v_hat_per_plus(spec, s_star))
    vm = float(v_per_minus(spec, s_star))
    vm0 = float(v_per_minus(spec, 0.0))
    vs = float(v_star(spec, s_star))
    g2 = float(spec.g(s_star)) ** 2
    a_star = float(spec.a.antiderivative(s_star))
    C0 = (
        4.0 * (2.0 - d1) / d1 * g2 / math.sqrt(math.pi * dd)
        * math.sqrt(vh) / vm ** 1.5 * (1.0 - vm / (2.0 * vs))
    )
    gamma0 = (2.0 - d1) ** 2 * math.exp(-2.0 * a_star) * vm0 / vm ** 2
    report = RateReport(
        lam=spec.lam, period=T, s_star=s_star, R=math.sqrt(f(s_star)), rho_dd=dd,
        C0=C0, C=0.5 * C0, gamma0=gamma0, theta0=-0.5 * math.log(gamma0),
        v_hat_star=vh, v_minus_star=vm, v_minus_zero=vm0, alpha_star=a_star, ties=ties,
    )
    logger.info("rate_minimum_found", s_star=s_star, R=report.R, C0=C0, rho_dd=dd)
    return report


# =============================================================================
# INTRINSIC TIME
# =============================================================================

def theta(spec: ModelSpec, rate: RateReport, t: ArrayLike) -> np.ndarray:
    """theta(t) = alpha(t, s*) - log(v^_per(t))/2 - log(delta1 / v^_per(s*))."""
    A = spec.a.antiderivative
    return (
        A(t) - rate.alpha_star
        - 0.5 * np.log(v_hat_per_plus(spec, t))
        - math.log(spec.delta1 / rate.v_hat_star)
    )


def theta_prime(spec: ModelSpec, t: ArrayLike) -> np.ndarray:
    return 0.5 * spec.g(t) ** 2 / v_hat_per_plus(spec, t)


def gamma_t(spec: ModelSpec, rate: RateReport, t: ArrayLike) -> np.ndarray:
    """gamma(t) = delta1^2 exp(-2 alpha(t, s* + nT)) v^_per(t) / v^_per(s*)^2, t in [nT, (n+1)T)."""
    t = np.asarray(t, dtype=float)
    A = spec.a.antiderivative
    n = np.floor(t / spec.period)
    anchor = A(rate.s_star + n * spec.period)
    return (
        spec.delta1 ** 2 * np.exp(-2.0 * (A(t) - anchor))
        * v_hat_per_plus(spec, t) / rate.v_hat_star ** 2
    )


def theta_bar(spec: ModelSpec, rate: RateReport, t: ArrayLike) -> np.ndarray:
    """theta(t) - lambda T floor(t/T); jumps by -lambda T at each multiple of T."""
    t = np.asarray(t, dtype=float)
    return theta(spec, rate, t) - spec.lambdaT * np.floor(t / spec.period)


def scaled_spec(spec: ModelSpec, period: float) -> ModelSpec:
    """Same coefficient shapes on a new period: a_T(t) = a_1(t/T), g_T(t) = g_1(t/T)."""
    return spec.with_period(period)


# =============================================================================
# INTERPOLATION TABLE
# =============================================================================

@dataclass(frozen=True)
class VarianceTable:
    """
    Periodic cubic splines of v_per_minus and v^_per_plus on a fixed grid.

    Built once per coefficient set and shared read-only; used where
    millions of variance evaluations are needed (integral theory curve,
    renewal kernels).
    """
    spec: ModelSpec
    minus: CubicSpline
    plus: CubicSpline

    @classmethod
    def build(cls, spec: ModelSpec, points: int = 4096) -> "VarianceTable":
        grid = np.linspace(0.0, spec.period, points + 1)
        vm = v_per_minus(spec, grid[:-1])
        vp = v_hat_per_plus(spec, grid[:-1])
        logger.debug("variance_table_built", points=points)
        return cls(
            spec,
            CubicSpline(grid, np.append(vm, vm[0]), bc_type="periodic"),
            CubicSpline(grid, np.append(vp, vp[0]), bc_type="periodic"),
        )

    def v_per_minus(self, t: ArrayLike) -> np.ndarray:
        return self.minus(np.mod(t, self.spec.period))

    def v_hat_per_plus(self, t: ArrayLike) -> np.ndarray:
        return self.plus(np.mod(t, self.spec.period))

    def v_minus(self, t: ArrayLike, t0: ArrayLike) -> np.ndarray:
        A = self.spec.a.antiderivative
        out = self.v_per_minus(t) - np.exp(-2.0 * (A(t) - A(t0))) * self.v_per_minus(t0)
        return np.maximum(out, 0.0)

    def v_hat_plus(self, t: ArrayLike, s: ArrayLike) -> np.ndarray:
        A = self.spec.a.antiderivative
        out = self.v_hat_per_plus(s) - np.exp(-2.0 * (A(t) - A(s))) * self.v_hat_per_plus(t)
        return np.maximum(out, 0.0)


@lru_cache(maxsize=16)
def _cached_table(spec: ModelSpec) -> VarianceTable:
    return VarianceTable.build(spec)


def variance_table(spec: ModelSpec) -> VarianceTable:
    """Shared table for the coefficients of spec (independent of sigma)."""
    return _cached_table(spec.with_sigma(1.0))
