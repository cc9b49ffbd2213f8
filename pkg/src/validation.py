"""
CyclingLab Validation

Acceptance suite behind `cyclinglab validate`. Each criterion measures one
property against a tolerance from settings.validate.tolerances and returns
a CriterionResult; an exception inside a criterion fails that criterion
only.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.stats import pearsonr

from .coefficients import ModelSpec
from .config import Scenario, Settings, get_settings
from .errors import DegenerateMinimumError
from .observability import ErrorClassification, get_logger, log_phase_end, log_phase_start
from .profile import CyclingParams, S_tilde, SumParams, profile_fourier, profile_sum
from .theory import (
    crossing_cdf_plus,
    hypotheses,
    p_plus_integral,
    p_plus_laplace,
    p_plus_transient_bound,
    per_period_mass,
)
from .variances import (
    RateReport,
    find_rate_minimum,
    theta_bar,
    v_hat_per_plus,
    v_hat_plus,
    v_minus,
    v_per_minus,
)

logger = get_logger("validation")

PROFILE_LAMBDA_T = (0.3, 0.5, 1.0, 2.0, 5.0)
MC_CRITERIA = frozenset({"simulator_exactness", "theory_vs_mc", "transient_bound"})


@dataclass(frozen=True)
class CriterionResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    runtime_s: float = 0.0
    detail: str = ""

    def row(self) -> tuple:
        return (self.name, self.passed, self.measured, self.tolerance, self.runtime_s, self.detail)


@dataclass
class ValidationContext:
    """Shared inputs of one validation run; the shape Monte Carlo run is cached for reuse."""
    scenario: Scenario
    spec: ModelSpec
    settings: Settings
    tolerances: dict[str, float]
    workers: int = 1
    _rate: Optional[RateReport] = None
    _shape_run: Optional[object] = None

    @property
    def rate(self) -> RateReport:
        if self._rate is None:
            self._rate = find_rate_minimum(self.spec)
        return self._rate

    def shape_run(self):
        """Full switching run at the shape sigma, shared by two criteria."""
        if self._shape_run is None:
            from .montecarlo import simulate

            v = self.settings.validate_
            spec = self.spec.with_sigma(v.shape_sigma)
            cfg = replace(
                self.scenario.to_sim_config(self.settings, self.workers),
                n_paths=v.shape_paths,
            )
            self._shape_run = (spec, simulate(spec, cfg))
        return self._shape_run


# =============================================================================
# ANALYTIC CRITERIA
# =============================================================================

def profile_dual(ctx: ValidationContext) -> CriterionResult:
    """Lattice sum vs Fourier series of P on 512 points, several lambda T."""
    x = np.arange(512) / 512.0
    worst = 0.0
    for lt in PROFILE_LAMBDA_T:
        p = CyclingParams(lt)
        worst = max(worst, float(np.max(np.abs(profile_sum(p, x) - profile_fourier(p, x)))))
    tol = ctx.tolerances["profile_dual"]
    return CriterionResult("profile_dual", worst <= tol, worst, tol,
                           detail=f"lambdaT in {list(PROFILE_LAMBDA_T)}")


def normalization(ctx: ValidationContext) -> CriterionResult:
    """Mean of P equals 1/(2 lambda T), and each period carries mass 1/2."""
    lt = ctx.spec.lambdaT
    x = np.arange(4096) / 4096.0
    mean_err = abs(float(np.mean(profile_sum(CyclingParams(lt), x))) - 0.5 / lt) * 2.0 * lt
    tol = ctx.tolerances["normalization"]
    mass_tol = ctx.tolerances["period_mass"]
    try:
        mass_err = abs(per_period_mass(ctx.spec, ctx.rate) - 0.5)
        detail = f"profile mean rel. error {mean_err:.2e}; period mass error {mass_err:.2e} (tol {mass_tol:g})"
    except DegenerateMinimumError as exc:
        mass_err = 0.0
        detail = f"profile mean rel. error {mean_err:.2e}; period mass skipped: {exc}"
    passed = mean_err <= tol and mass_err <= mass_tol
    return CriterionResult("normalization", passed, mean_err, tol, detail=detail)


def _five_point(f: Callable[[np.ndarray], np.ndarray], t: np.ndarray, h: float) -> np.ndarray:
    return (-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12.0 * h)


def variance_engine(ctx: ValidationContext) -> CriterionResult:
    """ODE residuals, relation vs direct quadrature, and the v* envelope."""
    spec = ctx.spec
    t = spec.grid(1024)
    h = 1e-3 * spec.period
    a, g2 = spec.a(t), spec.g(t) ** 2
    scale = float(np.max(g2))

    vm, vh = v_per_minus(spec, t), v_hat_per_plus(spec, t)
    res_minus = _five_point(lambda x: v_per_minus(spec, x), t, h) - (g2 - 2.0 * a * vm)
    res_plus = _five_point(lambda x: v_hat_per_plus(spec, x), t, h) - (2.0 * a * vh - g2)
    ode = float(max(np.max(np.abs(res_minus)), np.max(np.abs(res_plus)))) / scale

    s = spec.grid(16)
    later = s + spec.period * np.linspace(0.3, 2.7, s.size)
    relation = np.concatenate([
        np.abs(v_minus(spec, later, s, "relation") / v_minus(spec, later, s, "direct") - 1.0),
        np.abs(v_hat_plus(spec, later, s, "relation") / v_hat_plus(spec, later, s, "direct") - 1.0),
    ])
    rel = float(np.max(relation))

    hyp = hypotheses(spec)
    lo, hi = hyp.vunder * (1 - 1e-12), hyp.vbar * (1 + 1e-12)
    envelope = bool(np.all((vm >= lo) & (vm <= hi) & (vh >= lo) & (vh <= hi)))

    tol, rel_tol = ctx.tolerances["variance_ode"], ctx.tolerances["variance_relation"]
    return CriterionResult(
        "variance_engine", ode <= tol and rel <= rel_tol and envelope, ode, tol,
        detail=f"relation error {rel:.2e} (tol {rel_tol:g}); envelope {'ok' if envelope else 'violated'}",
    )


def volterra_oracle(ctx: ValidationContext) -> CriterionResult:
    """Brownian motion against d = 1: closed form, first-kind residual, contraction bracket."""
    from .volterra import (
        check_first_kind,
        constant_boundary_density,
        constant_boundary_problem,
        fixed_point_prefactor,
        solve_second_kind,
    )

    p = constant_boundary_problem(1.0, 1.0)
    sol = solve_second_kind(p, 5.0, 2000)
    window = sol.grid >= 0.05
    exact = constant_boundary_density(sol.grid[window])
    err = float(np.max(np.abs(sol.psi[window] / exact - 1.0)))
    residual = check_first_kind(p, sol).sup_relative
    fp = fixed_point_prefactor(p, 5.0, 400)
    guaranteed = fp.epsilon < 1.0
    inside = bool(np.all(
        (fp.c[guaranteed] >= fp.bracket_lo[guaranteed] - 1e-12 * np.abs(fp.c[guaranteed]))
        & (fp.c[guaranteed] <= fp.bracket_hi[guaranteed] + 1e-12 * np.abs(fp.c[guaranteed]))
    ))
    tol, res_tol = ctx.tolerances["volterra_oracle"], ctx.tolerances["volterra_residual"]
    return CriterionResult(
        "volterra_oracle", err <= tol and residual <= res_tol and inside, err, tol,
        detail=f"first-kind residual {residual:.2e} (tol {res_tol:g}); bracket {'holds' if inside else 'violated'}",
    )


def metastable_cycling(ctx: ValidationContext) -> CriterionResult:
    """
    The Laplace-sum prefactor c(t, sigma)/sigma over period n = 40 matches
    the one at sigma exp(-lambda T) over period n + 2, and so does its peak
    phase within the period.

    The two sums differ by the term A(theta_bar - eta - lambda T), so the
    check runs at the scenario sigma or, when that term is not negligible
    there, at the largest sigma with theta_bar - eta - lambda T <= -2.
    """
    spec, rate = ctx.spec, ctx.rate
    n, cells = 40, 512
    t = n * spec.period + spec.grid(cells)
    eta = max(abs(math.log(spec.sigma)), float(np.max(theta_bar(spec, rate, t))) - spec.lambdaT + 2.0)
    upper = spec.with_sigma(math.exp(-eta))
    lower = spec.with_sigma(upper.sigma * math.exp(-spec.lambdaT))
    c_hi = p_plus_laplace(upper, rate, t).prefactor / upper.sigma
    c_lo = p_plus_laplace(lower, rate, t + 2.0 * spec.period).prefactor / lower.sigma
    measured = float(np.max(np.abs(c_lo / c_hi - 1.0)))
    shift = abs(int(np.argmax(c_hi)) - int(np.argmax(c_lo)))
    shift = min(shift, cells - shift)
    tol = ctx.tolerances["metastable_cycling"]
    return CriterionResult(
        "metastable_cycling", measured <= tol and shift <= 1, measured, tol,
        detail=f"sigma {upper.sigma:.3g}; peak phase shift {shift} cells of T/{cells} "
               f"between periods {n} and {n + 2}",
    )


def sum_periodicity(ctx: ValidationContext) -> CriterionResult:
    """S~(n, eta + lambda T, t) against S~(n - 2, eta, t - 2T) at n = 40, eta = 3, lambda T = 1."""
    theta0, bar = 0.5, 0.3
    base = dict(t=0.0, gamma0=math.exp(-2 * theta0), gamma_t=math.exp(-2 * bar),
                theta0=theta0, theta_bar=bar, lambdaT=1.0)
    shifted = S_tilde(SumParams(n=40, eta=4.0, **base))
    reference = S_tilde(SumParams(n=38, eta=3.0, **{**base, "t": -2.0}))
    measured = abs(shifted - reference) / reference
    tol = ctx.tolerances["sum_periodicity"]
    return CriterionResult("sum_periodicity", measured <= tol, measured, tol)


# =============================================================================
# MONTE CARLO CRITERIA
# =============================================================================

def simulator_exactness(ctx: ValidationContext) -> CriterionResult:
    """KS distance of the single-branch crossing time against the reflection-principle CDF."""
    from .montecarlo import ks_distance, ks_margin, simulate_branch_plus

    v = ctx.settings.validate_
    spec = ctx.spec.with_sigma(v.exactness_sigma)
    periods = max(8, math.ceil(8.0 / spec.lambdaT))
    cfg = replace(ctx.scenario.to_sim_config(ctx.settings, ctx.workers),
                  n_paths=v.exactness_paths, t_max_periods=periods)
    result = simulate_branch_plus(spec, cfg, 0.0)
    distance = ks_distance(result, lambda t: crossing_cdf_plus(spec, t, 0.0))
    margin = ks_margin(result.n_paths, factor=ctx.tolerances["simulator_exactness"])
    return CriterionResult(
        "simulator_exactness", distance <= margin, distance, margin,
        detail=f"n = {result.n_paths}, sigma = {spec.sigma}",
    )


def _bin_masses(spec: ModelSpec, rate: RateReport, edges: np.ndarray, sub: int = 8) -> np.ndarray:
    lo, width = edges[:-1], np.diff(edges)
    pts = lo[:, None] + width[:, None] * (np.arange(sub) + 0.5) / sub
    values = p_plus_laplace(spec, rate, pts.ravel(), strict=False).value
    return np.asarray(values).reshape(pts.shape).mean(axis=1) * width


def theory_vs_mc(ctx: ValidationContext) -> CriterionResult:
    """Pearson r of per-bin masses, and total uncensored mass against the integral curve."""
    from .montecarlo import estimate_histogram

    spec, result = ctx.shape_run()
    rate = ctx.rate
    v = ctx.settings.validate_
    hist = estimate_histogram(result)
    per_period = ctx.settings.simulation.bins_per_period
    counts = hist.counts.reshape(-1, per_period)
    theory = _bin_masses(spec, rate, hist.edges).reshape(-1, per_period)
    keep = (counts.sum(axis=1) >= v.shape_min_events) & np.all(np.isfinite(theory), axis=1)

    tol = ctx.tolerances["theory_vs_mc"]
    if keep.sum() < 2:
        return CriterionResult("theory_vs_mc", False, float("nan"), tol,
                               detail=f"only {int(keep.sum())} periods with enough events")
    mc_mass = (counts[keep] / hist.n_paths).ravel()
    r = float(pearsonr(mc_mass, theory[keep].ravel()).statistic)

    grid = np.linspace(0.0, result.t_max, 32 * round(result.t_max / spec.period) + 1)
    curve = p_plus_integral(spec, rate, grid[1:], points_per_period=256).value
    predicted = float(np.trapezoid(np.append(0.0, np.nan_to_num(curve)), grid))
    observed = result.n_events / result.n_paths
    ratio = max(observed / predicted, predicted / observed) if observed > 0 and predicted > 0 else math.inf
    mass_tol = ctx.tolerances["theory_vs_mc_mass"]
    return CriterionResult(
        "theory_vs_mc", r >= tol and ratio <= mass_tol, r, tol,
        detail=f"{int(keep.sum())} periods; mass ratio {ratio:.3f} (tol {mass_tol:g})",
    )


def transient_bound(ctx: ValidationContext) -> CriterionResult:
    """Empirical P(tau <= t) (99% Wilson lower end) stays below the integrated transient bound."""
    from .montecarlo import cumulative_passage

    spec, result = ctx.shape_run()
    A = spec.a.antiderivative
    limit = 2.0 * abs(math.log(spec.sigma))
    fine = np.linspace(0.0, min(result.t_max, 4.0 * limit / spec.lam + spec.period), 4097)
    fine = fine[A(fine) < limit]
    tol = ctx.tolerances["transient_bound"]
    if fine.size < 2:
        return CriterionResult("transient_bound", True, 0.0, tol, detail="empty transient window")
    bound = p_plus_transient_bound(spec, ctx.rate, fine).value
    cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (bound[1:] + bound[:-1]) * np.diff(fine))])
    passage = cumulative_passage(result, fine, level=0.99)
    excess = float(np.max(passage.lower - cumulative))
    return CriterionResult("transient_bound", excess <= tol, excess, tol,
                           detail=f"transient window t < {fine[-1]:.4g}")


# =============================================================================
# RUNNER
# =============================================================================

CRITERIA: dict[str, Callable[[ValidationContext], CriterionResult]] = {
    "profile_dual": profile_dual,
    "normalization": normalization,
    "variance_engine": variance_engine,
    "volterra_oracle": volterra_oracle,
    "simulator_exactness": simulator_exactness,
    "metastable_cycling": metastable_cycling,
    "theory_vs_mc": theory_vs_mc,
    "transient_bound": transient_bound,
    "sum_periodicity": sum_periodicity,
}


def selected_criteria(skip: Iterable[str] = ()) -> list[str]:
    """Criterion names after removing skipped names; "mc" removes every Monte Carlo criterion."""
    skip = set(skip)
    dropped = set(skip)
    if "mc" in skip:
        dropped |= MC_CRITERIA
    unknown = skip - set(CRITERIA) - {"mc"}
    if unknown:
        raise KeyError(f"unknown criteria: {sorted(unknown)}")
    return [name for name in CRITERIA if name not in dropped]


def run_validation(
    scenario: Scenario,
    skip: Iterable[str] = (),
    tolerances: Optional[dict[str, float]] = None,
    workers: int = 1,
    settings: Optional[Settings] = None,
    on_result: Optional[Callable[[CriterionResult], None]] = None,
) -> list[CriterionResult]:
    """Evaluate the selected criteria in order."""
    settings = settings or get_settings()
    merged = {**settings.validate_.tolerances, **(tolerances or {})}
    ctx = ValidationContext(scenario, scenario.to_model_spec(), settings, merged, workers)
    results: list[CriterionResult] = []
    for name in selected_criteria(skip):
        log_phase_start(f"criterion_{name}")
        started = time.perf_counter()
        try:
            result = CRITERIA[name](ctx)
        except Exception as exc:  # a failing criterion must not stop the suite
            classification = ErrorClassification.from_exception(exc)
            logger.warning("criterion_error", criterion=name, error=str(exc),
                           classification=classification.value)
            result = CriterionResult(name, False, float("nan"), merged.get(name, float("nan")),
                                     detail=f"{type(exc).__name__}: {exc}")
        elapsed = time.perf_counter() - started
        result = replace(result, runtime_s=round(elapsed, 3))
        log_phase_end(f"criterion_{name}", duration_ms=elapsed * 1000.0)
        logger.info("criterion_evaluated", criterion=name, passed=result.passed,
                    measured=result.measured, tolerance=result.tolerance)
        results.append(result)
        if on_result is not None:
            on_result(result)
    return results
