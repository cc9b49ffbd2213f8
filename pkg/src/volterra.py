"""
CyclingLab Volterra Solver

First-passage density of a zero-drift Gaussian process
z_t = sigma * int sqrt(v'(s)) dW_s through a moving boundary d(t), from the
second-kind integral equation

    psi(t) = b0(t) F(t) - int_0^t b~(t,s) F(t|s) psi(s) ds

and the fixed-point operator for the subexponential prefactor c(t) in
psi(t) = c(t) exp(-d(t)^2 / 2 sigma^2 v(t)) / sigma.

The solver works on c directly: the exponential factors then appear only
as exp(-r(t,s)/2 sigma^2) with r >= 0, so nothing under- or overflows on
the horizons used here (a few periods with lambda T of order one).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np
from numpy.polynomial.chebyshev import chebinterpolate, chebval
from numpy.typing import ArrayLike
from scipy.interpolate import BarycentricInterpolator, CubicSpline
from scipy.linalg import solve_triangular

from .coefficients import ModelSpec
from .errors import GridError
from .observability import get_logger

logger = get_logger("volterra")

Curve = Callable[[np.ndarray], np.ndarray]

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_BLOCK_ROWS = 256
_HALVING_RTOL = 1e-2
_NEGATIVE_PSI_RTOL = 1e-6


# =============================================================================
# PROBLEM
# =============================================================================

@dataclass(frozen=True)
class FptProblem:
    """
    Level-crossing instance: variance profile v with v(0)=0, boundary d with
    d(0) > 0, and noise intensity sigma. Time is local (the process starts
    at 0).
    """
    v: Curve
    v_prime: Curve
    d: Curve
    d_prime: Curve
    sigma: float
    name: str = "custom"

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise GridError(f"sigma must be positive, got {self.sigma}")

    def with_sigma(self, sigma: float) -> "FptProblem":
        return replace(self, sigma=sigma)

    def F(self, t: ArrayLike) -> np.ndarray:
        """Density of z_t at d(t)."""
        t = np.asarray(t, dtype=float)
        v = self.v(t)
        return np.exp(-self.d(t) ** 2 / (2.0 * self.sigma ** 2 * v)) / (self.sigma * np.sqrt(2.0 * np.pi * v))


class BoundaryCoeffs(NamedTuple):
    b0: np.ndarray
    b_tilde: np.ndarray
    c0: np.ndarray
    c_tilde: np.ndarray
    r: np.ndarray


@dataclass
class _Nodes:
    """Problem curves sampled on tau_k = k h, k = 0..N."""
    h: float
    tau: np.ndarray
    v: np.ndarray
    vp: np.ndarray
    d: np.ndarray
    dp: np.ndarray

    @property
    def n(self) -> int:
        return self.tau.size - 1


def transition_density(p: FptProblem, t: ArrayLike, y: ArrayLike, s: ArrayLike, x: ArrayLike) -> np.ndarray:
    """f(t, y | s, x): Gaussian density with variance sigma^2 (v(t) - v(s))."""
    t, s = np.asarray(t, dtype=float), np.asarray(s, dtype=float)
    if np.any(t <= s):
        raise ValueError("transition_density requires t > s")
    var = p.v(t) - p.v(s)
    dy = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    return np.exp(-dy ** 2 / (2.0 * p.sigma ** 2 * var)) / (p.sigma * np.sqrt(2.0 * np.pi * var))


def boundary_coeffs(p: FptProblem, t: ArrayLike, s: ArrayLike) -> BoundaryCoeffs:
    """
    b0(t), b~(t,s), c0(t), c~(t,s) and r(t,s) for s < t.

    b~(t,s) and r(t,s) both vanish as s -> t.
    """
    t, s = np.asarray(t, dtype=float), np.asarray(s, dtype=float)
    vt, vs, vpt = p.v(t), p.v(s), p.v_prime(t)
    dt, ds, dpt = p.d(t), p.d(s), p.d_prime(t)
    return _coeffs(vt, vs, vpt, dt, ds, dpt)


def _coeffs(vt, vs, vpt, dt, ds, dpt) -> BoundaryCoeffs:
    with np.errstate(divide="ignore", invalid="ignore"):
        vts = vt - vs
        b0 = vpt * dt / vt - dpt
        b_tilde = vpt * (dt - ds) / vts - dpt
        c0 = b0 / np.sqrt(2.0 * np.pi * vt)
        c_tilde = b_tilde / np.sqrt(2.0 * np.pi * vts)
        r = vt * vs / vts * (ds / vs - dt / vt) ** 2
    return BoundaryCoeffs(b0, b_tilde, c0, c_tilde, r)


def _sample(p: FptProblem, t_max: float, n: int) -> _Nodes:
    if n < 2:
        raise GridError(f"grid needs at least 2 intervals, got {n}")
    h = t_max / n
    tau = h * np.arange(n + 1)
    nodes = _Nodes(h, tau, p.v(tau), p.v_prime(tau), p.d(tau), p.d_prime(tau))
    for name in ("v", "vp", "d", "dp"):
        if not np.all(np.isfinite(getattr(nodes, name))):
            raise GridError(f"{p.name}: non-finite {name} on [0, {t_max}]")

    scale = max(1.0, float(np.max(np.abs(nodes.v))))
    if abs(nodes.v[0]) > 1e-12 * scale:
        raise GridError(f"{p.name}: v(0) = {nodes.v[0]:.3e}, must vanish")
    v0 = float(np.min(nodes.vp))
    if not v0 > 0:
        raise GridError(f"{p.name}: v' must stay positive, min {v0:.3e}")
    if not nodes.d[0] > 0:
        raise GridError(f"{p.name}: boundary must start positive, d(0) = {nodes.d[0]:.3e}")
    return nodes


def _kernel_block(nodes: _Nodes, sigma: float, a0: int, a1: int) -> np.ndarray:
    """
    Rows a0..a1-1 of the discretized kernel over unknowns c(tau_1..tau_N).

    Entry [a, b] weighs c(tau_{b+1}) in the equation at tau_{a+1}; it is
    nonzero only for b < a. The tau_0 node carries no weight since
    exp(-r(t, 0)/2 sigma^2) = 0, and the diagonal vanishes with b~.
    """
    rows = np.arange(a0, a1) + 1
    cols = np.arange(1, a1 + 1)
    vt, vpt, dt, dpt = (x[rows, None] for x in (nodes.v, nodes.vp, nodes.d, nodes.dp))
    vs, ds = nodes.v[None, cols], nodes.d[None, cols]
    co = _coeffs(vt, vs, vpt, dt, ds, dpt)
    lower = cols[None, :] < rows[:, None]
    with np.errstate(invalid="ignore", over="ignore"):
        block = (nodes.h / sigma) * co.c_tilde * np.exp(-co.r / (2.0 * sigma ** 2))
    return np.where(lower, block, 0.0)


def _c0(nodes: _Nodes) -> np.ndarray:
    v, vp, d, dp = nodes.v[1:], nodes.vp[1:], nodes.d[1:], nodes.dp[1:]
    return (vp * d / v - dp) / np.sqrt(2.0 * np.pi * v)


def _forward_solve(nodes: _Nodes, sigma: float) -> np.ndarray:
    """Solve (I + K) c = c0 by block forward substitution."""
    n = nodes.n
    c0 = _c0(nodes)
    c = np.empty(n)
    for a0 in range(0, n, _BLOCK_ROWS):
        a1 = min(n, a0 + _BLOCK_ROWS)
        block = _kernel_block(nodes, sigma, a0, a1)
        rhs = c0[a0:a1] - block[:, :a0] @ c[:a0]
        square = block[:, a0:a1] + np.eye(a1 - a0)
        c[a0:a1] = solve_triangular(square, rhs, lower=True, unit_diagonal=True)
    if not np.all(np.isfinite(c)):
        raise GridError("non-finite prefactor; grid too coarse or horizon too long")
    return c


# =============================================================================
# SOLUTION
# =============================================================================

@dataclass
class FirstKindReport:
    """Residual of F(t) = int_0^t F(t|s) psi(s) ds on a subset of grid times."""
    times: np.ndarray
    relative: np.ndarray
    absolute: np.ndarray
    evaluated: np.ndarray

    @property
    def sup_relative(self) -> float:
        rel = self.relative[self.evaluated]
        return float(np.max(rel)) if rel.size else 0.0


@dataclass
class VolterraSolution:
    """Density psi, prefactor c and diagnostics on the grid h, 2h, ..., Nh."""
    grid: np.ndarray
    psi: np.ndarray
    c: np.ndarray
    c0: np.ndarray
    deviation_bound: np.ndarray
    mass: float
    problem: str = "custom"
    epsilon: Optional[np.ndarray] = None
    residual: Optional[FirstKindReport] = None
    halving_change: Optional[float] = None

    def to_density(self, offset: float = 0.0):
        from .theory import DensityGrid

        return DensityGrid(self.grid + offset, self.psi, meta="volterra")


def _deviation_bound(nodes: _Nodes) -> np.ndarray:
    """(2 pi v(t))^(-1/2) sup_{s<t} |b~(t, s)| at every grid node."""
    out = np.empty(nodes.n)
    for a0 in range(0, nodes.n, _BLOCK_ROWS):
        a1 = min(nodes.n, a0 + _BLOCK_ROWS)
        rows = np.arange(a0, a1) + 1
        cols = np.arange(0, a1 + 1)
        vt, vpt, dt, dpt = (x[rows, None] for x in (nodes.v, nodes.vp, nodes.d, nodes.dp))
        co = _coeffs(vt, nodes.v[None, cols], vpt, dt, nodes.d[None, cols], dpt)
        mask = cols[None, :] < rows[:, None]
        sup = np.max(np.where(mask, np.abs(co.b_tilde), 0.0), axis=1)
        out[a0:a1] = sup / np.sqrt(2.0 * np.pi * nodes.v[rows])
    return out


def _psi(nodes: _Nodes, c: np.ndarray, sigma: float, name: str) -> np.ndarray:
    v, d = nodes.v[1:], nodes.d[1:]
    psi = c * np.exp(-d ** 2 / (2.0 * sigma ** 2 * v)) / sigma
    peak = float(np.max(np.abs(psi))) if psi.size else 0.0
    if psi.size and float(np.min(psi)) < -_NEGATIVE_PSI_RTOL * max(peak, 1e-300):
        raise GridError(f"{name}: negative density {float(np.min(psi)):.3e}; refine the grid")
    return np.maximum(psi, 0.0)


def _trapezoid_mass(h: float, psi: np.ndarray) -> float:
    # psi(0) = 0
    return float(h * (psi[:-1].sum() + 0.5 * psi[-1]))


def solve_second_kind(
    p: FptProblem,
    t_max: float,
    n: int,
    halving_check: bool = True,
) -> VolterraSolution:
    """
    Solve the second-kind equation on a uniform grid of n intervals.

    The product trapezoid rule has a strictly lower-triangular kernel
    (b~ F(t|s) vanishes at s = t), so one forward sweep suffices.

    Raises:
        GridError: invariant breach, non-finite values, or a halving
            check that moves psi by more than 1% of its maximum
    """
    nodes = _sample(p, t_max, n)
    c = _forward_solve(nodes, p.sigma)
    psi = _psi(nodes, c, p.sigma, p.name)

    change = None
    if halving_check and n >= 8:
        coarse_nodes = _sample(p, t_max, n // 2)
        coarse = _psi(coarse_nodes, _forward_solve(coarse_nodes, p.sigma), p.sigma, p.name)
        fine_on_coarse = np.interp(coarse_nodes.tau[1:], nodes.tau[1:], psi)
        scale = max(float(np.max(psi)), 1e-300)
        change = float(np.max(np.abs(fine_on_coarse - coarse))) / scale
        if change > _HALVING_RTOL:
            raise GridError(
                f"{p.name}: halving the grid changes psi by {change:.2e} relative; increase n"
            )

    sol = VolterraSolution(
        grid=nodes.tau[1:].copy(),
        psi=psi,
        c=c,
        c0=_c0(nodes),
        deviation_bound=_deviation_bound(nodes),
        mass=_trapezoid_mass(nodes.h, psi),
        problem=p.name,
        halving_change=change,
    )
    logger.info("volterra_solved", problem=p.name, n=n, t_max=t_max, mass=sol.mass,
                halving_change=change)
    return sol


# =============================================================================
# FIRST-KIND CHECK
# =============================================================================

def check_first_kind(
    p: FptProblem,
    sol: VolterraSolution,
    points: int = 200,
    panels: int = 64,
    floor: float = 1e-6,
) -> FirstKindReport:
    """
    Residual of the first-kind identity, in the ratio form

        1 = (1/sigma) int_0^t sqrt(v(t)/v(t,s)) c(s) exp(-r(t,s)/2 sigma^2) ds,

    with s = t - u^2 to absorb the (t-s)^(-1/2) singularity. The relative
    residual is reported only where F(t) >= floor * sup F; the absolute
    residual is F(t) times the relative one.
    """
    h = float(sol.grid[0])
    pick = np.unique(np.linspace(1, sol.grid.size - 1, min(points, sol.grid.size - 1)).astype(int))
    times = sol.grid[pick]

    positive = np.all(sol.c > 0)
    if positive:
        spline = CubicSpline(sol.grid, np.log(sol.c))
    else:
        spline = CubicSpline(sol.grid, sol.c)

    def c_of(s: np.ndarray) -> np.ndarray:
        early = s < h
        inner = np.clip(s, h, sol.grid[-1])
        value = np.exp(spline(inner)) if positive else spline(inner)
        if np.any(early):
            exact = boundary_coeffs(p, np.maximum(s, 1e-300), 0.0).c0
            value = np.where(early, exact, value)
        return value

    nodes, weights = np.polynomial.legendre.leggauss(16)
    total = np.empty(times.size)
    for i, t in enumerate(times):
        edges = np.linspace(0.0, math.sqrt(t), panels + 1)
        half = 0.5 * np.diff(edges)
        u = (edges[:-1, None] + half[:, None] * (nodes + 1.0)).ravel()
        w = (half[:, None] * weights).ravel()
        s = t - u ** 2
        ok = s > 0
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            co = boundary_coeffs(p, t, s[ok])
            vt, vts = p.v(t), p.v(t) - p.v(s[ok])
            # ds = 2u du and sqrt(v(t)/v(t,s)) ~ 1/u near u = 0
            integrand = 2.0 * u[ok] * np.sqrt(vt / vts) * c_of(s[ok]) * np.exp(-co.r / (2.0 * p.sigma ** 2))
        integrand = np.where(np.isfinite(integrand), integrand, 0.0)
        total[i] = float(np.dot(w[ok], integrand)) / p.sigma

    F = p.F(times)
    relative = np.abs(1.0 - total)
    evaluated = F >= floor * float(np.max(F))
    report = FirstKindReport(times, relative, F * relative, evaluated)
    sol.residual = report
    logger.debug("first_kind_checked", problem=p.name, sup_relative=report.sup_relative)
    return report


# =============================================================================
# FIXED-POINT PREFACTOR
# =============================================================================

@dataclass(frozen=True)
class ContractionConstants:
    """Delta, M1, M2 (contraction) and M3 (two-sided bracket)."""
    Delta: float
    M1: float
    M2: float
    M3: float


@dataclass
class FixedPointResult:
    grid: np.ndarray
    c: np.ndarray
    c0: np.ndarray
    epsilon: np.ndarray
    bracket_lo: np.ndarray
    bracket_hi: np.ndarray
    constants: ContractionConstants
    conditions_ok: bool
    iterations: int
    converged: bool
    notes: list[str] = field(default_factory=list)


def contraction_epsilon(consts: ContractionConstants, sigma: float, t: ArrayLike) -> np.ndarray:
    """eps(t) = 2 M1 (exp(-Delta^2/4 sigma^2) t / sigma + 4 M2 sigma / Delta^2)."""
    t = np.asarray(t, dtype=float)
    D, M1, M2 = consts.Delta, consts.M1, consts.M2
    return 2.0 * M1 * (math.exp(-D ** 2 / (4.0 * sigma ** 2)) * t / sigma + 4.0 * M2 * sigma / D ** 2)


def _condition_terms(nodes: _Nodes) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    v, vp, d, dp = nodes.v, nodes.vp, nodes.d, nodes.dp
    lhs = d * vp - v * dp
    delta_ratio = lhs / (vp * (1.0 + np.sqrt(v)))
    m2_ratio = (1.0 + v) / vp
    m3_ratio = lhs / (1.0 + v ** 1.5)
    return delta_ratio, m2_ratio, m3_ratio


def _sup_c_tilde(nodes: _Nodes, stride: int) -> float:
    idx = np.arange(1, nodes.n + 1, stride)
    t, s = idx[:, None], idx[None, :]
    co = _coeffs(nodes.v[t], nodes.v[s], nodes.vp[t], nodes.d[t], nodes.d[s], nodes.dp[t])
    vals = np.where(s < t, np.abs(co.c_tilde), 0.0)
    return float(np.max(vals[np.isfinite(vals)], initial=0.0))


def estimate_constants(p: FptProblem, t_max: float, n: int) -> ContractionConstants:
    """Tightest Delta, M1, M2, M3 satisfying the contraction conditions on the grid."""
    nodes = _sample(p, t_max, n)
    delta_ratio, m2_ratio, m3_ratio = _condition_terms(nodes)
    stride = max(1, nodes.n // 400)
    return ContractionConstants(
        Delta=float(np.min(delta_ratio)),
        M1=_sup_c_tilde(nodes, stride),
        M2=float(np.max(m2_ratio)),
        M3=float(np.max(m3_ratio)),
    )


def _weighted_norm(nodes: _Nodes, c: np.ndarray) -> float:
    w = nodes.v[1:] ** 1.5
    return float(np.max(np.abs(w / (1.0 + w) * c)))


def fixed_point_prefactor(
    p: FptProblem,
    t_max: float,
    n: int,
    constants: Optional[ContractionConstants] = None,
    iters: int = 200,
    tol: float = 1e-12,
) -> FixedPointResult:
    """
    Iterate c <- T c from c0 and attach the contraction bracket.

    Supplied constants are checked against the conditions on the grid; a
    violation is logged, flagged, and the bracket is left NaN. Where
    eps(t) >= 1 there is no contraction guarantee and the bracket is NaN,
    but the iteration still runs.
    """
    nodes = _sample(p, t_max, n)
    notes: list[str] = []
    auto = estimate_constants(p, t_max, n)
    consts = constants or auto
    conditions_ok = consts.Delta > 0
    if constants is not None:
        delta_ratio, m2_ratio, m3_ratio = _condition_terms(nodes)
        violated = [
            name for name, ok in (
                ("Delta", np.all(delta_ratio >= consts.Delta * (1 - 1e-12))),
                ("M1", auto.M1 <= consts.M1 * (1 + 1e-12)),
                ("M2", np.all(m2_ratio <= consts.M2 * (1 + 1e-12))),
                ("M3", np.all(m3_ratio <= consts.M3 * (1 + 1e-12))),
            ) if not ok
        ]
        if violated:
            conditions_ok = False
            notes.append(f"supplied constants violate conditions: {', '.join(violated)}")
            logger.warning("contraction_conditions_violated", problem=p.name, constants=violated)
    elif not conditions_ok:
        notes.append("boundary condition d v' - v d' > 0 fails on the grid")

    kernel = _kernel_block(nodes, p.sigma, 0, nodes.n)
    c0 = _c0(nodes)
    c = c0.copy()
    scale = max(_weighted_norm(nodes, c0), 1e-300)
    converged = False
    iterations = 0
    for iterations in range(1, iters + 1):
        updated = c0 - kernel @ c
        change = _weighted_norm(nodes, updated - c)
        c = updated
        if change < tol * scale:
            converged = True
            break
    if not converged:
        notes.append(f"no convergence within {iters} iterations")

    grid = nodes.tau[1:].copy()
    eps = contraction_epsilon(consts, p.sigma, grid) if consts.Delta > 0 else np.full(grid.size, np.inf)
    if np.any(eps >= 1.0):
        notes.append("eps >= 1 on part of the grid: no contraction guarantee there")
        logger.warning("contraction_not_guaranteed", problem=p.name, eps_max=float(np.max(eps)))
    with np.errstate(divide="ignore", invalid="ignore"):
        width = eps / (1.0 - eps) * consts.M2 * consts.M3 / consts.Delta
    valid = (eps < 1.0) & conditions_ok
    lo = np.where(valid, c0 * (1.0 - width), np.nan)
    hi = np.where(valid, c0 * (1.0 + width), np.nan)
    logger.info("fixed_point_done", problem=p.name, iterations=iterations, converged=converged)
    return FixedPointResult(grid, c, c0, eps, lo, hi, consts, conditions_ok, iterations, converged, notes)


# =============================================================================
# PROBLEM FACTORIES
# =============================================================================

def constant_boundary_problem(boundary: float = 1.0, sigma: float = 1.0) -> FptProblem:
    """Brownian motion (v(t) = t) against a constant level."""
    return FptProblem(
        v=lambda t: np.asarray(t, dtype=float),
        v_prime=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        d=lambda t: np.full_like(np.asarray(t, dtype=float), boundary),
        d_prime=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        sigma=sigma,
        name="constant-boundary",
    )


def constant_boundary_density(t: ArrayLike, boundary: float = 1.0, sigma: float = 1.0) -> np.ndarray:
    """Closed form d t^(-3/2) (2 pi)^(-1/2) exp(-d^2/2t), scaled to sigma."""
    t = np.asarray(t, dtype=float)
    return boundary / (sigma * _SQRT_2PI * t ** 1.5) * np.exp(-boundary ** 2 / (2.0 * sigma ** 2 * t))


def polynomial_problem(v_coeffs: list[float], d_coeffs: list[float], sigma: float) -> FptProblem:
    """v and d as polynomials in local time, coefficients lowest degree first."""
    v = np.polynomial.Polynomial(v_coeffs)
    d = np.polynomial.Polynomial(d_coeffs)
    dv, dd = v.deriv(), d.deriv()
    return FptProblem(v=v, v_prime=dv, d=d, d_prime=dd, sigma=sigma, name="custom")


def psi_minus_problem(spec: ModelSpec) -> FptProblem:
    """
    Minus branch from -1 at time 0 to the level 1 - delta1:
    z = exp(alpha(t)) (y + 1), v(t) = exp(2 alpha(t)) v_-(t, 0),
    d(t) = (2 - delta1) exp(alpha(t)).
    """
    from .variances import v_minus

    A, a, g = spec.a.antiderivative, spec.a, spec.g
    k = 2.0 - spec.delta1
    return FptProblem(
        v=lambda t: np.exp(2.0 * A(t)) * v_minus(spec, t, 0.0),
        v_prime=lambda t: np.exp(2.0 * A(t)) * g(t) ** 2,
        d=lambda t: k * np.exp(A(t)),
        d_prime=lambda t: k * a(t) * np.exp(A(t)),
        sigma=spec.sigma,
        name="model-psi-minus",
    )


def psi_up_problem(spec: ModelSpec, start: float) -> FptProblem:
    """Minus branch from 1 - delta2 at time start up to 1 - delta1."""
    from .variances import v_minus

    A, a, g = spec.a.antiderivative, spec.a, spec.g
    a_start = float(A(start))
    k1, k2 = 2.0 - spec.delta1, 2.0 - spec.delta2

    def growth(tau: np.ndarray) -> np.ndarray:
        return np.exp(A(start + np.asarray(tau, dtype=float)) - a_start)

    return FptProblem(
        v=lambda tau: growth(tau) ** 2 * v_minus(spec, start + np.asarray(tau, dtype=float), start),
        v_prime=lambda tau: growth(tau) ** 2 * g(start + np.asarray(tau, dtype=float)) ** 2,
        d=lambda tau: k1 * growth(tau) - k2,
        d_prime=lambda tau: k1 * a(start + np.asarray(tau, dtype=float)) * growth(tau),
        sigma=spec.sigma,
        name="model-psi-up",
    )


def psi_down_problem(spec: ModelSpec, start: float) -> FptProblem:
    """
    Plus branch from 1 - delta1 at time start down to 1 - delta2, without
    killing at +1: -z = delta2 exp(-alpha(u, s)) - delta1 boundary with
    variance v^_+(u, s).
    """
    from .variances import v_hat_plus

    A, a, g = spec.a.antiderivative, spec.a, spec.g
    a_start = float(A(start))
    d1, d2 = spec.delta1, spec.delta2

    def decay(tau: np.ndarray) -> np.ndarray:
        return np.exp(-(A(start + np.asarray(tau, dtype=float)) - a_start))

    return FptProblem(
        v=lambda tau: v_hat_plus(spec, start + np.asarray(tau, dtype=float), start),
        v_prime=lambda tau: decay(tau) ** 2 * g(start + np.asarray(tau, dtype=float)) ** 2,
        d=lambda tau: d2 * decay(tau) - d1,
        d_prime=lambda tau: -d2 * a(start + np.asarray(tau, dtype=float)) * decay(tau),
        sigma=spec.sigma,
        name="model-psi-down",
    )



# =============================================================================
# RENEWAL LEGS
# =============================================================================

_LEG_PROBLEMS = {"up": psi_up_problem, "down": psi_down_problem}
_LEG_CHUNK = 16384


def _leg_natural(spec: ModelSpec, leg: str, u: ArrayLike, v: ArrayLike):
    """
    Variance, distance to the target level and coordinate scale of a renewal
    leg from v to u, in the original coordinates (the Volterra problems use
    z = scale * y).
    """
    from .variances import variance_table

    table = variance_table(spec)
    A = spec.a.antiderivative
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    decay = np.exp(-(A(u) - A(v)))
    if leg == "up":
        vn = table.v_per_minus(u) - decay ** 2 * table.v_per_minus(v)
        dn = (2.0 - spec.delta1) - (2.0 - spec.delta2) * decay
        scale = 1.0 / decay
    else:
        vn = table.v_hat_per_plus(v) - decay ** 2 * table.v_hat_per_plus(u)
        dn = spec.delta2 * decay - spec.delta1
        scale = np.ones_like(decay)
    return np.maximum(vn, 0.0), dn, scale


@dataclass(frozen=True, eq=False)
class LegSurface:
    """
    psi_up or psi_down for every start v in [s, t] and end u in (v, t].

    psi(u, v) = Q(x, v) Vn^(-3/2) exp(-dn^2 / 2 sigma^2 Vn) / sigma with
    x = (u - v)/(t - v). Q = c Vn^(3/2) is smooth and tends to
    g(v)^2 (delta2 - delta1)/sqrt(2 pi) as u -> v; it is kept as Chebyshev
    coefficients in x for each Chebyshev-Lobatto start and interpolated
    barycentrically in v. After a fixed number of Volterra solves psi can
    be evaluated anywhere on the triangle.
    """
    spec: ModelSpec
    leg: str
    s: float
    t: float
    starts: np.ndarray
    coefficients: np.ndarray
    interpolator: BarycentricInterpolator

    @classmethod
    def build(
        cls,
        spec: ModelSpec,
        leg: str,
        s: float,
        t: float,
        n_starts: int = 33,
        degree: int = 48,
        step: float = 1.0 / 128.0,
    ) -> "LegSurface":
        """
        Solve the leg from every start; `step` is the Volterra step in units of T.

        Raises:
            GridError: from the underlying Volterra solves
        """
        if leg not in _LEG_PROBLEMS:
            raise ValueError(f"leg must be 'up' or 'down', got {leg!r}")
        if not t > s:
            raise ValueError("LegSurface requires t > s")
        span = t - s
        starts = s + 0.5 * span * (1.0 - np.cos(np.pi * np.arange(n_starts) / (n_starts - 1)))
        starts[-1] = t
        q0 = spec.g(starts) ** 2 * (spec.delta2 - spec.delta1) / _SQRT_2PI

        coefficients = np.zeros((n_starts, degree + 1))
        coefficients[-1, 0] = q0[-1]
        for j, v in enumerate(starts[:-1]):
            horizon = t - float(v)
            n = max(4 * degree, math.ceil(horizon / (step * spec.period)))
            p = _LEG_PROBLEMS[leg](spec, float(v))
            sol = solve_second_kind(p, horizon, n, halving_check=False)
            _, _, scale = _leg_natural(spec, leg, v + sol.grid, v)
            vn = p.v(sol.grid) / scale ** 2
            spline = CubicSpline(
                np.concatenate(([0.0], sol.grid / horizon)),
                np.concatenate(([q0[j]], sol.c * vn ** 1.5)),
            )
            coefficients[j] = chebinterpolate(lambda z: spline(0.5 * (z + 1.0)), degree)

        logger.debug("leg_surface_built", leg=leg, s=s, t=t, starts=n_starts, degree=degree)
        return cls(spec, leg, s, t, starts, coefficients, BarycentricInterpolator(starts, coefficients))

    def __call__(self, u: ArrayLike, v: ArrayLike) -> np.ndarray:
        """psi(u, v) elementwise (u and v broadcast); zero where u <= v."""
        u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        shape = u.shape
        u, v = u.ravel(), v.ravel()
        out = np.zeros(u.size)
        sigma = self.spec.sigma
        for c0 in range(0, u.size, _LEG_CHUNK):
            uc, vc = u[c0:c0 + _LEG_CHUNK], v[c0:c0 + _LEG_CHUNK]
            inside = uc > vc
            if not np.any(inside):
                continue
            uc, vc = uc[inside], vc[inside]
            x = (uc - vc) / (self.t - vc)
            q = chebval(2.0 * x - 1.0, self.interpolator(vc).T, tensor=False)
            vn, dn, _ = _leg_natural(self.spec, self.leg, uc, vc)
            positive = vn > 0
            safe = np.where(positive, vn, 1.0)
            with np.errstate(over="ignore", under="ignore"):
                log_shape = -1.5 * np.log(safe) - dn ** 2 / (2.0 * sigma ** 2 * safe)
                psi = np.maximum(q, 0.0) * np.exp(log_shape) / sigma
            chunk = out[c0:c0 + _LEG_CHUNK]
            chunk[inside] = np.where(positive, psi, 0.0)
        return out.reshape(shape)
