"""
CyclingLab Theory

Closed-form first-passage densities of the switching model and the
three-regime description of p_+(t) = c(t, sigma) exp(-R^2 / 2 sigma^2):

- psi_-, the reflection-principle crossing law and p1 for the two legs
- the renewal kernel rates and a numerical renewal series
- the Laplace-sum and metastable (cycling profile) densities
- the transient upper bound and regime classification

Error brackets are returned next to the leading values as relative
bounds; they are never folded into the values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import erfc, expit

from .coefficients import HypothesisReport, ModelSpec, check_hypotheses, v_star
from .config import get_settings
from .errors import QuadratureError, RegimeError
from .observability import get_logger
from .profile import CyclingParams, S_hat, S_tilde, SumParams, laplace_sum, profile_sum
from .variances import (
    RateReport,
    integrate,
    theta,
    theta_prime,
    v_hat_per_plus,
    v_hat_plus,
    v_minus,
    variance_table,
)

logger = get_logger("theory")

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_LAPLACE_MIN_PERIODS = 4
# S by its own sum against sigma^2 S~
_LAPLACE_CROSS_RTOL = 1e-9


# =============================================================================
# RESULT TYPES
# =============================================================================

@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Density values on a strictly increasing time grid, with optional CI band."""
    times: np.ndarray
    values: np.ndarray
    meta: str
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape:
            raise ValueError("times and values must have the same shape")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        if np.any(values < 0):
            raise ValueError("density values must be nonnegative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.times.size

    @property
    def is_empty(self) -> bool:
        return self.times.size == 0

    def mass(self) -> float:
        """Trapezoid mass, ignoring NaN values."""
        if self.times.size < 2:
            return 0.0
        return float(np.trapezoid(np.nan_to_num(self.values), self.times))


@dataclass(frozen=True)
class TheoryValue:
    """value = prefactor * exp(-exponent / 2 sigma^2), with a relative error bound."""
    value: np.ndarray | float
    prefactor: np.ndarray | float
    exponent: np.ndarray | float
    sigma: float
    rel_error: np.ndarray | float = 0.0
    flags: tuple[str, ...] = ()

    @property
    def log_value(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(self.prefactor) - np.asarray(self.exponent) / (2.0 * self.sigma ** 2)


class Regime(str, Enum):
    TRANSIENT = "transient"
    METASTABLE = "metastable"
    ASYMPTOTIC = "asymptotic"

    @property
    def rank(self) -> int:
        return {Regime.TRANSIENT: 0, Regime.METASTABLE: 1, Regime.ASYMPTOTIC: 2}[self]


@dataclass(frozen=True)
class RegimeClassification:
    """
    Regime of time t. boundary_values holds (2|log sigma|/lambda, the
    metastable validity limit sigma^3 exp(beta Delta0^2 / 2 sigma^2)) with the
    second expressed in units of alpha.
    """
    t: float
    alpha: float
    regime: Regime
    boundary_values: tuple[float, float]
    asymptotic_log_threshold: float


@dataclass(frozen=True)
class KernelRates:
    rho_up_sq: np.ndarray
    rho_up_plus_sq: np.ndarray
    bound: float


@dataclass
class RenewalResult:
    """Numerical renewal series for q(t, s)."""
    q_value: float
    p1: float
    corrections: list[float]
    term_bounds: list[float]
    remainder_bound: float
    sandwich_lo: float
    sandwich_hi: float
    kernel_sup: float
    flags: list[str] = field(default_factory=list)
    panels: int = 0
    quad_change: float = 0.0


# =============================================================================
# SHARED QUANTITIES
# =============================================================================

@lru_cache(maxsize=16)
def _cached_hypotheses(spec: ModelSpec) -> HypothesisReport:
    return check_hypotheses(spec)


def hypotheses(spec: ModelSpec) -> HypothesisReport:
    """Hypothesis report of the coefficients (sigma does not enter)."""
    return _cached_hypotheses(spec.with_sigma(1.0))


def _eta(sigma: float) -> float:
    return abs(math.log(sigma))


def kramers_time(rate: RateReport, sigma: float) -> float:
    """exp(R^2 / 2 sigma^2); inf when it overflows."""
    expo = rate.R_sq / (2.0 * sigma ** 2)
    return math.exp(expo) if expo < 709.0 else math.inf


def relaxation_time(spec: ModelSpec, sigma: Optional[float] = None) -> float:
    """2 |log sigma| / lambda."""
    return 2.0 * _eta(spec.sigma if sigma is None else sigma) / spec.lam


def escape_rate(p_plus: ArrayLike) -> np.ndarray:
    """Rate of escape in the symmetric setting: half the first-passage density."""
    return 0.5 * np.asarray(p_plus, dtype=float)


def rho0_sq(spec: ModelSpec, t: ArrayLike, s: ArrayLike) -> np.ndarray:
    """Exponent delta1^2 / v^_+(t, s) + (2 - delta1)^2 / v_-(s, 0) of the two-leg path."""
    d1 = spec.delta1
    with np.errstate(divide="ignore"):
        return d1 ** 2 / v_hat_plus(spec, t, s) + (2.0 - d1) ** 2 / v_minus(spec, s, 0.0)


# =============================================================================
# FIRST LEG: psi_-
# =============================================================================

def psi_minus(spec: ModelSpec, s: ArrayLike) -> TheoryValue:
    """
    First-passage density of the minus branch from -1 to 1 - delta1.

    The bracket (1/Delta)(sigma/Delta^2 + exp(-Delta^2/sigma^2) s/sigma) is
    returned as rel_error; s = 0 gives 0.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("psi_minus requires s >= 0")
    sigma, k = spec.sigma, 2.0 - spec.delta1
    v = v_minus(spec, s, 0.0)
    positive = v > 0
    safe_v = np.where(positive, v, 1.0)
    rho_sq = np.where(positive, k ** 2 / safe_v, np.inf)
    prefactor = (
        k * _INV_SQRT_2PI * (1.0 / safe_v - 1.0 / (2.0 * v_star(spec, s))) * spec.g(s) ** 2 / np.sqrt(safe_v)
    )
    prefactor = np.where(positive, np.maximum(prefactor, 0.0), 0.0)
    value = np.where(positive, prefactor * np.exp(-rho_sq / (2.0 * sigma ** 2)) / sigma, 0.0)

    hyp = hypotheses(spec)
    D = hyp.Delta
    flags: tuple[str, ...] = ()
    if D > 0:
        rel = (sigma / D ** 2 + math.exp(-D ** 2 / sigma ** 2) * s / sigma) / D
    else:
        rel = np.full(s.shape, np.inf)
        flags = ("H3 fails: no error bracket",)
    return TheoryValue(value, prefactor / sigma, rho_sq, sigma, rel, flags)


# =============================================================================
# SECOND LEG: reflection principle and p1
# =============================================================================

def _plus_leg(spec: ModelSpec, t: ArrayLike, s: ArrayLike):
    t, s = np.asarray(t, dtype=float), np.asarray(s, dtype=float)
    if np.any(t < s):
        raise ValueError("crossing laws require t >= s")
    vh = v_hat_plus(spec, t, s)
    positive = vh > 0
    safe = np.where(positive, vh, 1.0)
    rho_sq = np.where(positive, spec.delta1 ** 2 / safe, np.inf)
    return t, s, vh, positive, safe, rho_sq


def crossing_cdf_plus(spec: ModelSpec, t: ArrayLike, s: ArrayLike) -> np.ndarray:
    """P(y+ started at 1 - delta1 at time s has exceeded +1 by t) = 2 Phi(-rho_+/sigma)."""
    _, _, _, positive, _, rho_sq = _plus_leg(spec, t, s)
    rho = np.sqrt(np.where(positive, rho_sq, 0.0))
    return np.where(positive, erfc(rho / (spec.sigma * math.sqrt(2.0))), 0.0)


def _plus_prefactor(spec: ModelSpec, t: np.ndarray, s: np.ndarray, safe: np.ndarray) -> np.ndarray:
    A = spec.a.antiderivative
    return spec.delta1 * _INV_SQRT_2PI * spec.g(t) ** 2 * np.exp(-2.0 * (A(t) - A(s))) / safe ** 1.5


def crossing_density_plus(spec: ModelSpec, t: ArrayLike, s: ArrayLike) -> np.ndarray:
    """Time derivative of crossing_cdf_plus."""
    t, s, _, positive, safe, rho_sq = _plus_leg(spec, t, s)
    sigma = spec.sigma
    with np.errstate(over="ignore"):
        value = _plus_prefactor(spec, t, s, safe) * np.exp(-rho_sq / (2.0 * sigma ** 2)) / sigma
    return np.where(positive, value, 0.0)


def psi_down_rate(spec: ModelSpec, u: ArrayLike, s: ArrayLike) -> np.ndarray:
    """rho_down(u, s)^2 = (delta1 - delta2 exp(-alpha(u, s)))^2 / v^_+(u, s); +inf at u = s."""
    u, s = np.asarray(u, dtype=float), np.asarray(s, dtype=float)
    A = spec.a.antiderivative
    num = (spec.delta1 - spec.delta2 * np.exp(-(A(u) - A(s)))) ** 2
    vh = v_hat_plus(spec, u, s)
    with np.errstate(divide="ignore"):
        return np.where(vh > 0, num / np.where(vh > 0, vh, 1.0), np.inf)


def p1_density(spec: ModelSpec, t: ArrayLike, s: ArrayLike) -> TheoryValue:
    """
    Density of the first passage at +1 from (s, 1 - delta1) before
    returning to 1 - delta2, at leading order.

    rel_error bounds the correction exp(-alpha(t,s)) exp(-Delta0^2/sigma^2)/(sigma c_+).
    When H3 fails the value is still returned and flagged.
    """
    t, s, _, positive, safe, rho_sq = _plus_leg(spec, t, s)
    sigma = spec.sigma
    pref = np.where(positive, _plus_prefactor(spec, t, s, safe), 0.0)
    with np.errstate(over="ignore"):
        value = np.where(positive, pref * np.exp(-rho_sq / (2.0 * sigma ** 2)) / sigma, 0.0)

    hyp = hypotheses(spec)
    flags: tuple[str, ...] = ()
    A = spec.a.antiderivative
    if hyp.h3.passed:
        with np.errstate(divide="ignore"):
            rel = (
                np.exp(-(A(t) - A(s))) * math.exp(-hyp.Delta0 ** 2 / sigma ** 2)
                / (sigma * np.where(pref > 0, pref, np.nan))
            )
    else:
        rel = np.full(np.shape(value), np.inf)
        flags = ("prefactor may be smaller",)
    return TheoryValue(value, pref / sigma, rho_sq, sigma, rel, flags)


# =============================================================================
# RENEWAL KERNEL
# =============================================================================

def kernel_rates(spec: ModelSpec, u: ArrayLike, v: ArrayLike) -> KernelRates:
    """
    Exponential rates of psi_up (minus branch from 1 - delta2 back up to
    1 - delta1) and of its plus-branch comparison, with the kernel
    magnitude bound (const/sigma) exp(-(delta2 - delta1)^2 / 2 vbar sigma^2).
    """
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    A = spec.a.antiderivative
    d1, d2 = spec.delta1, spec.delta2
    decay = np.exp(-(A(u) - A(v)))
    vm, vh = v_minus(spec, u, v), v_hat_plus(spec, u, v)
    with np.errstate(divide="ignore"):
        up = np.where(vm > 0, ((2.0 - d1) - (2.0 - d2) * decay) ** 2 / np.where(vm > 0, vm, 1.0), np.inf)
        up_plus = np.where(vh > 0, (d2 - d1 * decay) ** 2 / np.where(vh > 0, vh, 1.0), np.inf)
    vbar = hypotheses(spec).vbar
    const = get_settings().theory.kernel_const
    sigma = spec.sigma
    bound = const / sigma * math.exp(-((d2 - d1) ** 2) / (2.0 * vbar * sigma ** 2))
    return KernelRates(up, up_plus, bound)


_DE_REACH = 3.0


def _double_exponential(panels: int, order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Composite Gauss-Legendre in xi on [-3, 3] mapped onto (0, 1) by
    y = (1 + tanh(pi/2 sinh xi))/2. Returns y, 1 - y and the weights
    (Jacobian included). Integrands that vanish flatly at 0 or 1 stay
    smooth in xi.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-_DE_REACH, _DE_REACH, panels + 1)
    half = 0.5 * np.diff(edges)
    xi = (edges[:-1, None] + half[:, None] * (x + 1.0)).ravel()
    q = 0.5 * math.pi * np.sinh(xi)
    weights = (half[:, None] * w).ravel() * 0.25 * math.pi * np.cosh(xi) / np.cosh(q) ** 2
    return expit(2.0 * q), expit(-2.0 * q), weights


class _RenewalGrid:
    """
    Nodes u_i of [s, t] and, for each, the nodes v_ij = s + (u_i - s) eta_j of
    [s, u_i], both on the double-exponential rule. Functions of one variable
    are held at the u_i and read at the v_ij by degree order-1 Lagrange
    interpolation on their xi-panel.
    """

    def __init__(self, s: float, t: float, panels: int, order: int):
        y, ybar, wy = _double_exponential(panels, order)
        span = t - s
        self.u = s + span * y
        self.eta = (y, ybar, wy)
        self.weights = span * wy
        depth = span * y
        self.v = s + depth[:, None] * y[None, :]
        self.row_weights = depth[:, None] * wy[None, :]

        # xi of v_ij from y = (v - s)/span and 1 - y = (t - v)/span
        y_ij = depth[:, None] * y[None, :] / span
        ybar_ij = (span * ybar[:, None] + depth[:, None] * ybar[None, :]) / span
        xi = np.arcsinh((np.log(y_ij) - np.log(ybar_ij)) / math.pi)
        xi = np.clip(xi, -_DE_REACH, _DE_REACH)
        width = 2.0 * _DE_REACH / panels
        panel = np.clip(np.floor((xi + _DE_REACH) / width).astype(int), 0, panels - 1)
        z = 2.0 * (xi + _DE_REACH - panel * width) / width - 1.0
        nodes, _ = np.polynomial.legendre.leggauss(order)
        self.index = panel[..., None] * order + np.arange(order)
        self.basis = _lagrange_basis(z, nodes)

    def at_v(self, phi: np.ndarray) -> np.ndarray:
        return np.einsum("ijk,ijk->ij", self.basis, phi[self.index])

    def convolve(self, psi: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """int_s^{u_i} psi(u_i, v) phi(v) dv, psi given at (u_i, v_ij)."""
        return np.einsum("ij,ij->i", self.row_weights * psi, self.at_v(phi))


def _lagrange_basis(z: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    bary = 1.0 / np.prod(nodes[:, None] - nodes[None, :] + np.eye(nodes.size), axis=1)
    diff = z[..., None] - nodes
    exact = diff == 0.0
    terms = bary / np.where(exact, 1.0, diff)
    basis = terms / terms.sum(axis=-1, keepdims=True)
    return np.where(exact.any(axis=-1, keepdims=True), exact.astype(float), basis)


def _renewal_kernel_sup(legs, grid: _RenewalGrid, s: float, t: float, points: int) -> float:
    """Largest K(u, w) on a uniform sample of s <= w < u <= t."""
    y, _, wy = grid.eta
    sample = np.linspace(s, t, points)
    u, w = np.meshgrid(sample, sample, indexing="ij")
    keep = u > w
    u, w = u[keep], w[keep]
    gap = u - w
    v = w[:, None] + gap[:, None] * y[None, :]
    kernel = np.einsum(
        "ij,ij->i", gap[:, None] * wy[None, :], legs["up"](u[:, None], v) * legs["down"](v, w[:, None])
    )
    return float(np.max(kernel)) if kernel.size else 0.0


def renewal_series(spec: ModelSpec, t: float, s: float, N: int) -> RenewalResult:
    """
    q(t, s) = p1(t, s) + sum_{n=1}^{N} int p1(t, u) K_n(u, s) du.

    K(u, w) = int psi_up(u, v) psi_down(v, w) dv, so K_n(., s) alternates
    the two legs: f_{n+1}(u) = int psi_up(u, v) g_n(v) dv with
    g_n(v) = int psi_down(v, w) f_n(w) dw and g_0 = psi_down(., s). The
    legs come from LegSurface. Every inner integral runs over [s, u] with
    the integrand vanishing flatly at both ends, so it is taken on the
    double-exponential rule in eta = (v - s)/(u - s), a tensor product
    with the outer rule in u. The panel count doubles from
    renewal_min_panels until the first correction changes by at most
    renewal_quad_rtol relative.

    psi_down is not killed at +1, so q is biased upwards. Terms below
    renewal_rtol * p1 are not computed; the factorial bound
    M^n (t - s)^n / n! is reported for each order instead, M being the
    sampled sup of K.

    Raises:
        QuadratureError: the first correction has not settled at
            renewal_max_panels panels
    """
    from .volterra import LegSurface

    if not t > s:
        raise ValueError("renewal_series requires t > s")
    if N < 0:
        raise ValueError("N must be >= 0")
    th = get_settings().theory
    sigma = spec.sigma
    lead = p1_density(spec, t, s)
    p1 = float(lead.value)
    span = t - s
    flags: list[str] = []

    hyp = hypotheses(spec)
    cplus = float(lead.prefactor) * sigma
    rho_sq = float(lead.exponent)
    d0 = hyp.Delta0 if hyp.h3.passed else 0.0
    cbar = cplus + th.sandwich_const * span / sigma ** 2 * (1.0 + cplus) * math.exp(-d0 ** 2 / sigma ** 2)
    sandwich_hi = cbar * math.exp(-rho_sq / (2.0 * sigma ** 2)) / sigma

    if N == 0:
        return RenewalResult(p1, p1, [], [], 0.0, p1, sandwich_hi, 0.0, flags)

    legs = {
        leg: LegSurface.build(spec, leg, s, t, th.renewal_starts, th.renewal_degree, th.renewal_step)
        for leg in ("up", "down")
    }

    def level(panels: int):
        grid = _RenewalGrid(s, t, panels, th.renewal_gl_order)
        up = legs["up"](grid.u[:, None], grid.v)
        down = legs["down"](grid.u[:, None], grid.v)
        outer = grid.weights * crossing_density_plus(spec, t, grid.u)
        k1 = grid.convolve(up, legs["down"](grid.u, s))
        return grid, up, down, outer, k1, float(np.dot(outer, k1))

    panels = th.renewal_min_panels
    grid, up, down, outer, k_n, first = level(panels)
    change = math.inf
    while True:
        if panels * 2 > th.renewal_max_panels:
            raise QuadratureError(
                f"renewal first correction still changes by {change:.2e} relative "
                f"at {panels} panels (cap {th.renewal_max_panels})"
            )
        panels *= 2
        grid, up, down, outer, k_n, refined = level(panels)
        change = abs(refined - first) / max(abs(refined), 1e-300)
        first = refined
        if change <= th.renewal_quad_rtol:
            break
    logger.debug("renewal_quadrature_converged", panels=panels, change=change)

    kernel_sup = max(_renewal_kernel_sup(legs, grid, s, t, th.renewal_sup_points), float(np.max(k_n)))
    corrections: list[float] = []
    bounds: list[float] = []
    for n in range(1, N + 1):
        bounds.append(kernel_sup ** n * span ** n / math.factorial(n))
        term = first if n == 1 else float(np.dot(outer, k_n))
        if corrections and abs(term) < th.renewal_rtol * p1:
            flags.append(f"terms from order {n} below renewal_rtol: factorial bound used")
            bounds.extend(kernel_sup ** k * span ** k / math.factorial(k) for k in range(n + 1, N + 1))
            break
        corrections.append(term)
        k_n = grid.convolve(up, grid.convolve(down, k_n))

    remainder = kernel_sup ** N * span ** N / math.factorial(N)
    flags.append("psi_down not killed at +1: q is an upper-bias estimate")
    q = p1 + sum(corrections)
    logger.info("renewal_series_done", t=t, s=s, orders=len(corrections), q=q, p1=p1, panels=panels)
    return RenewalResult(
        q, p1, corrections, bounds, remainder, p1, sandwich_hi, kernel_sup, flags,
        panels=panels, quad_change=change,
    )


# =============================================================================
# p_+ IN THE METASTABLE REGIME
# =============================================================================

def _regime_check(spec: ModelSpec, t: np.ndarray, strict: bool, what: str) -> np.ndarray:
    """Mask of times with alpha(t) >= 2 |log sigma|; raises in strict mode."""
    alpha = spec.a.antiderivative(t)
    lower = 2.0 * _eta(spec.sigma)
    ok = alpha >= lower
    if strict and not np.all(ok):
        bad = float(np.asarray(t)[~ok].flat[0])
        logger.debug("regime_violation", formula=what, t=bad)
        raise RegimeError(
            f"{what} is only valid for alpha(t) >= 2|log sigma| = {lower:.4g} (t = {bad:.4g}); "
            "use p_plus_transient_bound for earlier times",
            regime="transient",
            thresholds={"alpha_min": lower},
        )
    return ok


def p_plus_laplace(spec: ModelSpec, rate: RateReport, t: ArrayLike, strict: bool = True) -> TheoryValue:
    """
    p_+(t) = (1/sigma) C g(t)^2 / v^_per(t) S(n, sigma, t) exp(-R^2 / 2 sigma^2)
    with S = sigma^2 S~ and n = floor(t/T).

    Requires n >= 4 and n lambda T >= 2 |log sigma|; outside, strict mode
    raises RegimeError and non-strict mode returns NaN with a flag. S is also
    summed over the period index (laplace_sum); a disagreement with
    sigma^2 S~ is logged and flagged.
    """
    from .variances import gamma_t, theta_bar

    t = np.atleast_1d(np.asarray(t, dtype=float))
    sigma, eta = spec.sigma, _eta(spec.sigma)
    n = np.floor(t / spec.period).astype(int)
    ok = (n >= _LAPLACE_MIN_PERIODS) & (n * spec.lambdaT >= 2.0 * eta)
    if strict and not np.all(ok):
        bad = float(t[~ok][0])
        raise RegimeError(
            f"Laplace sum needs n >= {_LAPLACE_MIN_PERIODS} and n lambda T >= 2|log sigma| "
            f"(t = {bad:.4g}); use p_plus_transient_bound",
            regime="transient",
            thresholds={"n_min": _LAPLACE_MIN_PERIODS, "n_lambdaT_min": 2.0 * eta},
        )

    pref = np.full(t.shape, np.nan)
    mismatch = 0.0
    if np.any(ok):
        tv = t[ok]
        gam, tb = gamma_t(spec, rate, tv), theta_bar(spec, rate, tv)
        sums = np.array([
            S_tilde(SumParams(int(nk), eta, float(tk), rate.gamma0, float(gk), rate.theta0, float(bk), spec.lambdaT))
            for nk, tk, gk, bk in zip(n[ok], tv, gam, tb)
        ])
        direct = np.array([
            laplace_sum(int(nk), sigma, rate.gamma0, float(gk), spec.lambdaT) for nk, gk in zip(n[ok], gam)
        ])
        scale = max(float(np.max(sigma ** 2 * sums)), 1e-300)
        mismatch = float(np.max(np.abs(direct - sigma ** 2 * sums))) / scale
        pref[ok] = sigma * rate.C * spec.g(tv) ** 2 / v_hat_per_plus(spec, tv) * sums
    flags = [] if np.all(ok) else ["outside Laplace window: NaN"]
    if mismatch > _LAPLACE_CROSS_RTOL:
        logger.warning("laplace_sum_mismatch", mismatch=mismatch, sigma=sigma)
        flags.append(f"S and sigma^2 S~ differ by {mismatch:.1e} relative")
    value = pref * math.exp(-rate.R_sq / (2.0 * sigma ** 2))
    return TheoryValue(value, pref, rate.R_sq, sigma, np.where(ok, sigma, np.nan), tuple(flags))


def p_plus_metastable(spec: ModelSpec, rate: RateReport, t: ArrayLike, strict: bool = True) -> TheoryValue:
    """
    p_+(t) = sigma C0 theta'(t) P((|log sigma| - theta(t)) / lambda T) exp(-R^2 / 2 sigma^2).

    rel_error is asymptotic_const * (sigma + exp(-alpha(t)) / sigma^2). Times
    with alpha(t) < 2|log sigma| raise RegimeError in strict mode and are
    NaN otherwise; times past the metastable validity limit are flagged.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    sigma, eta = spec.sigma, _eta(spec.sigma)
    ok = _regime_check(spec, t, strict, "metastable formula")
    th = get_settings().theory

    profile = S_hat(CyclingParams(spec.lambdaT), eta, theta(spec, rate, t))
    pref = np.where(ok, sigma * rate.C0 * theta_prime(spec, t) * profile, np.nan)
    alpha = spec.a.antiderivative(t)
    rel = np.where(ok, th.asymptotic_const * (sigma + np.exp(-alpha) / sigma ** 2), np.nan)

    flags: list[str] = []
    if not np.all(ok):
        flags.append("transient times: NaN")
    limit = metastable_limit(spec)
    if np.any(alpha > limit):
        flags.append(f"alpha(t) beyond metastable limit {limit:.4g}")
    value = pref * math.exp(-rate.R_sq / (2.0 * sigma ** 2))
    return TheoryValue(value, pref, rate.R_sq, sigma, rel, tuple(flags))


def metastable_limit(spec: ModelSpec) -> float:
    """sigma^3 exp(beta Delta0^2 / 2 sigma^2), in units of alpha; NaN when H3 fails."""
    hyp = hypotheses(spec)
    if not hyp.h3.passed:
        return math.nan
    sigma = spec.sigma
    expo = get_settings().theory.beta * hyp.Delta0 ** 2 / (2.0 * sigma ** 2)
    return sigma ** 3 * math.exp(min(expo, 709.0))


def per_period_mass(spec: ModelSpec, rate: RateReport, n: int = 0, rtol: float = 1e-10) -> float:
    """Integral of theta'(t) P((|log sigma| - theta(t)) / lambda T) over [nT, (n+1)T]; equals 1/2."""
    eta, lt = _eta(spec.sigma), spec.lambdaT
    p = CyclingParams(lt)

    def integrand(x: np.ndarray, rows: np.ndarray) -> np.ndarray:
        return theta_prime(spec, x) * profile_sum(p, (eta - theta(spec, rate, x)) / lt)

    T = spec.period
    return float(integrate(integrand, n * T, (n + 1) * T, rtol=rtol))


# =============================================================================
# TRANSIENT BOUND
# =============================================================================

def transient_exponent(spec: ModelSpec, t: ArrayLike) -> np.ndarray:
    """L = 2 beta1 beta2 with beta1 = delta1 sqrt(v^_per(t))/vbar, beta2 = (2-delta1) sqrt(v_per(0))/vbar."""
    from .variances import v_per_minus

    hyp = hypotheses(spec)
    d1 = spec.delta1
    beta1 = d1 * np.sqrt(v_hat_per_plus(spec, t)) / hyp.vbar
    beta2 = (2.0 - d1) * math.sqrt(float(v_per_minus(spec, 0.0))) / hyp.vbar
    return 2.0 * beta1 * beta2


def transient_constant(spec: ModelSpec, rate: RateReport) -> float:
    """
    Leading constant of the transient bound.

    Automatic choice: C0 max(theta') max(P) exp(L_max / 2), which keeps
    the bound above the metastable prefactor at alpha(t) = 2|log sigma|.
    """
    configured = get_settings().theory.transient_const
    if configured is not None:
        return configured
    grid = spec.grid(512)
    lt = spec.lambdaT
    max_p = float(np.max(profile_sum(CyclingParams(lt), np.linspace(0.0, 1.0, 512, endpoint=False))))
    max_tp = float(np.max(theta_prime(spec, grid)))
    max_l = float(np.max(transient_exponent(spec, grid)))
    return rate.C0 * max_tp * max_p * math.exp(0.5 * max_l)


def p_plus_transient_bound(spec: ModelSpec, rate: RateReport, t: ArrayLike) -> TheoryValue:
    """
    Upper bound const / sigma^2 exp(-L e^{-alpha(t)} / 2 sigma^2) exp(-R^2 / 2 sigma^2).

    The excess of the two-leg exponent over R^2 is at least L e^{-alpha(t)},
    and it enters divided by 2 sigma^2 like the rest of the exponent.
    """
    t = np.asarray(t, dtype=float)
    sigma = spec.sigma
    L = transient_exponent(spec, t)
    const = transient_constant(spec, rate)
    alpha = spec.a.antiderivative(t)
    pref = const / sigma ** 2 * np.exp(-L * np.exp(-alpha) / (2.0 * sigma ** 2))
    value = pref * math.exp(-rate.R_sq / (2.0 * sigma ** 2))
    return TheoryValue(value, pref, rate.R_sq, sigma, 0.0, ("upper bound",))


# =============================================================================
# REGIMES
# =============================================================================

def classify_regime(spec: ModelSpec, rate: RateReport, t: float) -> RegimeClassification:
    """
    transient: alpha(t) < 2|log sigma|; asymptotic: alpha(t) >= const exp(R / 2 sigma^2);
    metastable in between. Comparisons are made in log space.
    """
    sigma = spec.sigma
    alpha = float(spec.a.antiderivative(t))
    lower = 2.0 * _eta(sigma)
    log_threshold = math.log(get_settings().theory.asymptotic_const) + rate.R / (2.0 * sigma ** 2)
    if alpha < lower:
        regime = Regime.TRANSIENT
    elif alpha > 0 and math.log(alpha) >= log_threshold:
        regime = Regime.ASYMPTOTIC
    else:
        regime = Regime.METASTABLE
    return RegimeClassification(
        t=float(t),
        alpha=alpha,
        regime=regime,
        boundary_values=(relaxation_time(spec), metastable_limit(spec)),
        asymptotic_log_threshold=log_threshold,
    )


def classify_regimes(spec: ModelSpec, rate: RateReport, t: ArrayLike) -> list[Regime]:
    return [classify_regime(spec, rate, float(x)).regime for x in np.atleast_1d(t)]


# =============================================================================
# INTEGRAL THEORY CURVE
# =============================================================================

def p_plus_integral(
    spec: ModelSpec,
    rate: RateReport,
    t: ArrayLike,
    points_per_period: int = 1024,
) -> TheoryValue:
    """
    p_+(t) = sigma^-2 int_0^t c_+(t,s) c_-(s,0) exp(-rho0(t,s)^2 / 2 sigma^2) ds
    at leading order, by the trapezoid rule in s.

    The smallest exponent is factored out before integrating, so the
    curve stays finite for small sigma. Variances come from the shared
    interpolation table.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    table = variance_table(spec)
    sigma, d1 = spec.sigma, spec.delta1
    A, g = spec.a.antiderivative, spec.g
    k = 2.0 - d1
    step = spec.period / points_per_period

    t_max = float(np.max(t)) if t.size else 0.0
    s_all = step * np.arange(int(math.ceil(t_max / step)) + 1)
    vm = table.v_minus(s_all, 0.0)
    good = vm > 0
    safe = np.where(good, vm, 1.0)
    rho_minus = np.where(good, k ** 2 / safe, np.inf)
    c_minus = np.where(
        good,
        np.maximum(k * _INV_SQRT_2PI * (1.0 / safe - 1.0 / (2.0 * v_star(spec, s_all))) * g(s_all) ** 2 / np.sqrt(safe), 0.0),
        0.0,
    )

    log_p = np.full(t.shape, -np.inf)
    for i, ti in enumerate(t):
        inner = s_all < ti
        s = np.append(s_all[inner], ti)
        vh = table.v_hat_plus(ti, s)
        ok = (vh > 0) & np.append(good[inner], False)
        vh_safe = np.where(ok, vh, 1.0)
        expo = np.where(ok, d1 ** 2 / vh_safe + np.append(rho_minus[inner], np.inf), np.inf)
        if not np.any(np.isfinite(expo)):
            continue
        e_min = float(np.min(expo))
        c_plus = d1 * _INV_SQRT_2PI * g(ti) ** 2 * np.exp(-2.0 * (A(ti) - A(s))) / vh_safe ** 1.5
        integrand = np.where(ok, c_plus * np.append(c_minus[inner], 0.0) * np.exp(-(expo - e_min) / (2.0 * sigma ** 2)), 0.0)
        total = float(np.trapezoid(integrand, s))
        if total > 0:
            log_p[i] = math.log(total) - 2.0 * math.log(sigma) - e_min / (2.0 * sigma ** 2)

    value = np.exp(log_p)
    pref = np.exp(log_p + rate.R_sq / (2.0 * sigma ** 2))
    return TheoryValue(value, pref, rate.R_sq, sigma, sigma, ("leading order",))


def density_grid(times: ArrayLike, tv: TheoryValue, meta: str) -> DensityGrid:
    """Keep the finite points of a theory curve."""
    times = np.asarray(times, dtype=float)
    values = np.broadcast_to(np.asarray(tv.value, dtype=float), times.shape)
    keep = np.isfinite(values)
    return DensityGrid(times[keep], values[keep], meta)


__all__ = [
    "DensityGrid",
    "KernelRates",
    "Regime",
    "RegimeClassification",
    "RenewalResult",
    "TheoryValue",
    "classify_regime",
    "classify_regimes",
    "crossing_cdf_plus",
    "crossing_density_plus",
    "density_grid",
    "escape_rate",
    "hypotheses",
    "kernel_rates",
    "kramers_time",
    "metastable_limit",
    "p1_density",
    "p_plus_integral",
    "p_plus_laplace",
    "p_plus_metastable",
    "p_plus_transient_bound",
    "per_period_mass",
    "psi_down_rate",
    "psi_minus",
    "relaxation_time",
    "renewal_series",
    "rho0_sq",
    "transient_constant",
    "transient_exponent",
]
