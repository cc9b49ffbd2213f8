"""
CyclingLab Monte Carlo

Simulator of the switching process: a path starts at -1 on the minus
branch, moves to the plus branch when it rises above 1 - delta1, falls
back below 1 - delta2, and exits when it exceeds +1.

Each substep samples the exact Gaussian transition of the current linear
branch. Exits of +1 between substep ends are caught with the crossing
probability of the Gaussian bridge. Every path draws from its own Philox
streams keyed by (seed, path_id, draw slot), so an outcome depends on
neither the batch size nor the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy.stats import norm

from .coefficients import ModelSpec
from .config import get_settings
from .observability import get_logger
from .theory import DensityGrid
from .variances import RateReport, v_minus, v_plus

logger = get_logger("montecarlo")

Branch = Literal["minus", "plus"]
Mode = Literal["switching", "minus_leg", "plus_branch"]

ProgressCallback = Callable[[int, int], None]

# Hard cap on the automatic horizon
_MAX_AUTO_PERIODS = 10_000


# =============================================================================
# CONFIGURATION
# =============================================================================

@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo run parameters. t_max_periods=None picks a horizon from the theory."""
    substeps_per_period: int = 64
    n_paths: int = 10_000
    t_max_periods: Optional[int] = None
    seed: int = 20240601
    bridge_correction: bool = True
    batch_size: int = 4096
    bridge_switching: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        for name in ("substeps_per_period", "n_paths", "batch_size", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.t_max_periods is not None and self.t_max_periods < 1:
            raise ValueError(f"t_max_periods must be >= 1, got {self.t_max_periods}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")

    def substep(self, spec: ModelSpec) -> float:
        return spec.period / self.substeps_per_period


@dataclass(frozen=True)
class PathOutcome:
    """
    One simulated path. tau_plus and first_up_time are None when the
    event did not happen before the horizon.
    """
    tau_plus: Optional[float]
    n_switches: int
    first_up_time: Optional[float]

    def __post_init__(self) -> None:
        if self.tau_plus is not None and self.first_up_time is not None:
            if self.first_up_time > self.tau_plus:
                raise ValueError("first_up_time must not exceed tau_plus")

    @property
    def censored(self) -> bool:
        return self.tau_plus is None


# =============================================================================
# EXACT STEPPING
# =============================================================================

@dataclass(frozen=True, eq=False)
class SubstepTables:
    """
    Per-substep decay factors and variance increments over one period
    (sigma = 1), starting at `start`. Valid for any later period because
    the coefficients are periodic.
    """
    h: float
    start: float
    decay_minus: np.ndarray
    var_minus: np.ndarray
    growth_plus: np.ndarray
    var_plus: np.ndarray

    @property
    def substeps(self) -> int:
        return self.decay_minus.size


def build_tables(spec: ModelSpec, substeps: int, start: float = 0.0) -> SubstepTables:
    """Tabulate the exact transition laws of both branches on one period of substeps."""
    h = spec.period / substeps
    t0 = start + h * np.arange(substeps)
    t1 = t0 + h
    A = spec.a.antiderivative
    growth = np.exp(A(t1) - A(t0))

    max_lambda_h = get_settings().simulation.max_lambda_h
    if spec.lam * h > max_lambda_h:
        logger.warning("substep_too_coarse", lambda_h=spec.lam * h, limit=max_lambda_h)

    return SubstepTables(
        h=h,
        start=start,
        decay_minus=1.0 / growth,
        var_minus=v_minus(spec, t1, t0, method="direct"),
        growth_plus=growth,
        var_plus=v_plus(spec, t1, t0, method="direct"),
    )


def step_exact(
    spec: ModelSpec,
    branch: Branch,
    y: ArrayLike,
    t: float,
    h: float,
    rng: Optional[np.random.Generator] = None,
    normal: Optional[ArrayLike] = None,
    sigma: Optional[float] = None,
) -> np.ndarray:
    """
    Sample y at t + h from the exact transition of one branch.

    minus: mean -1 + (y + 1) exp(-alpha(t+h, t)), variance sigma^2 v_-(t+h, t)
    plus:  mean  1 + (y - 1) exp(+alpha(t+h, t)), variance sigma^2 v_+(t+h, t)

    Standard normals are taken from `normal` when given, else from `rng`.
    sigma overrides spec.sigma (sigma=0 gives the deterministic flow).
    """
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    y = np.asarray(y, dtype=float)
    sig = spec.sigma if sigma is None else sigma
    A = spec.a.antiderivative
    growth = float(np.exp(A(t + h) - A(t)))
    if branch == "minus":
        mean = -1.0 + (y + 1.0) / growth
        var = float(v_minus(spec, t + h, t, method="direct"))
    elif branch == "plus":
        mean = 1.0 + (y - 1.0) * growth
        var = float(v_plus(spec, t + h, t, method="direct"))
    else:
        raise ValueError(f"unknown branch {branch!r}")
    if normal is None:
        rng = rng or np.random.default_rng()
        normal = rng.standard_normal(y.shape)
    return mean + sig * math.sqrt(var) * np.asarray(normal, dtype=float)


def _bridge_hit(gap0: np.ndarray, gap1: np.ndarray, var: float) -> np.ndarray:
    """Crossing probability of a Brownian bridge between two points below a level."""
    with np.errstate(over="ignore", invalid="ignore"):
        return np.exp(-2.0 * np.maximum(gap0, 0.0) * np.maximum(gap1, 0.0) / var)


# =============================================================================
# BATCH KERNEL
# =============================================================================

@dataclass(frozen=True)
class _BatchTask:
    spec: ModelSpec
    tables: SubstepTables
    mode: Mode
    seed: int
    batch: int
    first: int
    size: int
    steps: int
    bridge_plus: bool
    bridge_switching: bool


@dataclass
class _BatchResult:
    batch: int
    tau_plus: np.ndarray
    n_switches: np.ndarray
    first_up_time: np.ndarray


# draw slots, one stream each: transition normal, exit-bridge uniform, switching-bridge uniform
NORMAL_SLOT, EXIT_SLOT, SWITCH_SLOT = 0, 1, 2
_DRAW_BLOCK = 256


def path_stream(seed: int, path_id: int, slot: int) -> np.random.Generator:
    """Philox stream of one draw slot of one path; substep k takes its k-th draw."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(path_id, slot))))


class _PathDraws:
    """Draws of the paths first, ..., first + n - 1, a block of substeps at a time."""

    def __init__(self, seed: int, first: int, n: int, switching: bool):
        ids = range(first, first + n)
        self._normal = [path_stream(seed, p, NORMAL_SLOT) for p in ids]
        self._exit = [path_stream(seed, p, EXIT_SLOT) for p in ids]
        self._switch = [path_stream(seed, p, SWITCH_SLOT) for p in ids] if switching else None

    def block(self, steps: int) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
        """Arrays of shape (steps, n)."""
        z = np.stack([g.standard_normal(steps) for g in self._normal], axis=1)
        u_exit = np.stack([g.random(steps) for g in self._exit], axis=1)
        u_switch = None
        if self._switch is not None:
            u_switch = np.stack([g.random(steps) for g in self._switch], axis=1)
        return z, u_exit, u_switch


def _simulate_batch(task: _BatchTask) -> _BatchResult:
    spec, tab, n = task.spec, task.tables, task.size
    sig2 = spec.sigma ** 2
    sd_minus = spec.sigma * np.sqrt(tab.var_minus)
    sd_plus = spec.sigma * np.sqrt(tab.var_plus)
    up_level, down_level = 1.0 - spec.delta1, 1.0 - spec.delta2
    switching = task.mode == "switching"

    draws = _PathDraws(task.seed, task.first, n, task.bridge_switching)
    plus_start = task.mode == "plus_branch"
    y = np.full(n, up_level if plus_start else -1.0)
    on_plus = np.full(n, plus_start)
    alive = np.ones(n, dtype=bool)
    tau = np.full(n, np.nan)
    first_up = np.full(n, np.nan)
    switches = np.zeros(n, dtype=np.int64)

    m = tab.substeps
    for step in range(task.steps):
        if not alive.any():
            break
        k = step % m
        t1 = tab.start + (step + 1) * tab.h
        j = step % _DRAW_BLOCK
        if j == 0:
            z_block, exit_block, switch_block = draws.block(min(_DRAW_BLOCK, task.steps - step))
        z, u_exit = z_block[j], exit_block[j]
        u_switch = None if switch_block is None else switch_block[j]

        y_new = np.where(
            on_plus,
            1.0 + (y - 1.0) * tab.growth_plus[k] + sd_plus[k] * z,
            -1.0 + (y + 1.0) * tab.decay_minus[k] + sd_minus[k] * z,
        )
        plus_now = alive & on_plus
        minus_now = alive & ~on_plus

        exited = plus_now & (y_new > 1.0)
        if task.bridge_plus:
            # exact for the plus branch: exp(-alpha) z is a time-changed Brownian motion
            p_hit = _bridge_hit(1.0 - y, 1.0 - y_new, sig2 * tab.var_plus[k] / tab.growth_plus[k])
            exited |= plus_now & ~exited & (u_exit < p_hit)

        if task.mode == "minus_leg":
            rise = minus_now & (y_new > up_level)
            first_up[rise] = t1
            alive &= ~rise
            y = np.where(alive, y_new, y)
            continue

        rise = minus_now & (y_new > up_level)
        if u_switch is not None:
            p_rise = _bridge_hit(up_level - y, up_level - y_new, sig2 * tab.var_minus[k])
            rise |= minus_now & ~rise & (u_switch < p_rise)
        # a minus-branch endpoint above +1 passed both levels within the substep
        jumped = minus_now & (y_new > 1.0)
        exited |= jumped

        fall = np.zeros(n, dtype=bool)
        if switching:
            fall = plus_now & ~exited & (y_new < down_level)
            if u_switch is not None:
                p_fall = _bridge_hit(y - down_level, y_new - down_level, sig2 * tab.var_plus[k])
                fall |= plus_now & ~exited & ~fall & (u_switch < p_fall)

        new_up = rise & np.isnan(first_up)
        first_up[new_up] = t1
        switches += rise.astype(np.int64) + fall.astype(np.int64)
        on_plus = (on_plus | rise) & ~fall
        tau[exited] = t1
        alive &= ~exited
        y = np.where(alive, y_new, y)

    return _BatchResult(task.batch, tau, switches, first_up)


# =============================================================================
# RUNS
# =============================================================================

@dataclass(eq=False)
class SimulationResult:
    """Outcomes of a run, as arrays indexed by path id (NaN = not observed)."""
    tau_plus: np.ndarray
    n_switches: np.ndarray
    first_up_time: np.ndarray
    t_start: float
    t_max: float
    mode: Mode
    config: SimConfig
    period: float
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.tau_plus.size

    @property
    def events(self) -> np.ndarray:
        """Observed event times of the run's mode."""
        return self.first_up_time if self.mode == "minus_leg" else self.tau_plus

    @property
    def n_events(self) -> int:
        return int(np.count_nonzero(~np.isnan(self.events)))

    @property
    def censored_fraction(self) -> float:
        return 1.0 - self.n_events / self.n_paths if self.n_paths else 1.0

    def outcome(self, path_id: int) -> PathOutcome:
        tau, up = self.tau_plus[path_id], self.first_up_time[path_id]
        return PathOutcome(
            tau_plus=None if np.isnan(tau) else float(tau),
            n_switches=int(self.n_switches[path_id]),
            first_up_time=None if np.isnan(up) else float(up),
        )


def suggest_t_max_periods(spec: ModelSpec, rate: RateReport, fraction: Optional[float] = None) -> int:
    """
    Horizon (in periods) at which the expected uncensored fraction reaches
    `fraction`, from the relaxation time and the period-averaged metastable
    density sigma C0 / 2T exp(-R^2 / 2 sigma^2).
    """
    from .theory import relaxation_time

    fraction = get_settings().simulation.min_uncensored_fraction if fraction is None else fraction
    sigma, T = spec.sigma, spec.period
    log_rate = math.log(sigma * rate.C0 / (2.0 * T)) - rate.R_sq / (2.0 * sigma ** 2)
    need = -math.log1p(-min(fraction, 0.999))
    wait = math.exp(min(math.log(need) - log_rate, 700.0))
    periods = math.ceil((relaxation_time(spec) + wait) / T)
    periods = max(periods, 4 + math.ceil(relaxation_time(spec) / T))
    if periods > _MAX_AUTO_PERIODS:
        logger.warning("censoring_horizon_capped", wanted=periods, cap=_MAX_AUTO_PERIODS, sigma=sigma)
        periods = _MAX_AUTO_PERIODS
    return periods


def _horizon_periods(spec: ModelSpec, cfg: SimConfig) -> int:
    if cfg.t_max_periods is not None:
        return cfg.t_max_periods
    from .variances import find_rate_minimum

    return suggest_t_max_periods(spec, find_rate_minimum(spec))


def _tasks(spec: ModelSpec, cfg: SimConfig, mode: Mode, tables: SubstepTables, steps: int) -> list[_BatchTask]:
    n_batches = math.ceil(cfg.n_paths / cfg.batch_size)
    return [
        _BatchTask(
            spec=spec,
            tables=tables,
            mode=mode,
            seed=cfg.seed,
            batch=b,
            first=b * cfg.batch_size,
            size=min(cfg.batch_size, cfg.n_paths - b * cfg.batch_size),
            steps=steps,
            bridge_plus=cfg.bridge_correction,
            bridge_switching=cfg.bridge_switching and mode == "switching",
        )
        for b in range(n_batches)
    ]


def simulate(
    spec: ModelSpec,
    cfg: SimConfig,
    mode: Mode = "switching",
    start: float = 0.0,
    progress: Optional[ProgressCallback] = None,
) -> SimulationResult:
    """
    Run cfg.n_paths paths in fixed-size batches.

    Batches are independent work items; with cfg.workers > 1 they run in a
    process pool and are merged in batch order.
    """
    periods = _horizon_periods(spec, cfg)
    tables = build_tables(spec, cfg.substeps_per_period, start)
    steps = periods * cfg.substeps_per_period
    tasks = _tasks(spec, cfg, mode, tables, steps)
    logger.info("simulation_started", mode=mode, n_paths=cfg.n_paths, batches=len(tasks),
                periods=periods, workers=cfg.workers, sigma=spec.sigma)

    results: list[_BatchResult] = []
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for res in pool.map(_simulate_batch, tasks):
                results.append(res)
                _report(progress, len(results), len(tasks), res)
    else:
        for task in tasks:
            res = _simulate_batch(task)
            results.append(res)
            _report(progress, len(results), len(tasks), res)

    out = SimulationResult(
        tau_plus=np.concatenate([r.tau_plus for r in results]),
        n_switches=np.concatenate([r.n_switches for r in results]),
        first_up_time=np.concatenate([r.first_up_time for r in results]),
        t_start=start,
        t_max=start + periods * spec.period,
        mode=mode,
        config=cfg,
        period=spec.period,
    )
    logger.info("simulation_done", mode=mode, events=out.n_events, censored=out.censored_fraction)
    if out.n_events < get_settings().simulation.min_uncensored_fraction * out.n_paths:
        logger.warning("mostly_censored", censored=out.censored_fraction, t_max=out.t_max)
    return out


def _report(progress: Optional[ProgressCallback], done: int, total: int, res: _BatchResult) -> None:
    logger.debug("batch_completed", batch=res.batch, done=done, total=total)
    if progress is not None:
        progress(done, total)


def simulate_path(spec: ModelSpec, cfg: SimConfig, path_id: int) -> PathOutcome:
    """Outcome of one path; identical to the same path inside a full run."""
    if not 0 <= path_id < cfg.n_paths:
        raise ValueError(f"path_id must be in [0, {cfg.n_paths}), got {path_id}")
    periods = _horizon_periods(spec, cfg)
    task = _BatchTask(
        spec=spec,
        tables=build_tables(spec, cfg.substeps_per_period),
        mode="switching",
        seed=cfg.seed,
        batch=0,
        first=path_id,
        size=1,
        steps=periods * cfg.substeps_per_period,
        bridge_plus=cfg.bridge_correction,
        bridge_switching=cfg.bridge_switching,
    )
    res = _simulate_batch(task)
    tau, up = res.tau_plus[0], res.first_up_time[0]
    return PathOutcome(
        tau_plus=None if np.isnan(tau) else float(tau),
        n_switches=int(res.n_switches[0]),
        first_up_time=None if np.isnan(up) else float(up),
    )


def simulate_branch_plus(spec: ModelSpec, cfg: SimConfig, s: float = 0.0,
                         progress: Optional[ProgressCallback] = None) -> SimulationResult:
    """y+ from (s, 1 - delta1) without switching, until it exceeds +1."""
    return simulate(spec, cfg, mode="plus_branch", start=s, progress=progress)


# =============================================================================
# ESTIMATORS
# =============================================================================

@dataclass(frozen=True, eq=False)
class Histogram:
    """Event counts on [t_start, t_max] with 95% normal-approximation intervals."""
    edges: np.ndarray
    counts: np.ndarray
    n_paths: int
    censored: int

    @property
    def width(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def density(self) -> np.ndarray:
        return self.counts / (self.n_paths * self.width)

    def interval(self, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        z = norm.ppf(0.5 + level / 2.0)
        p = self.counts / self.n_paths
        half = z * np.sqrt(p * (1.0 - p) / self.n_paths)
        return np.maximum(p - half, 0.0) / self.width, (p + half) / self.width

    def to_density(self, meta: str = "mc-histogram") -> DensityGrid:
        if self.counts.sum() == 0:
            return DensityGrid(np.empty(0), np.empty(0), meta)
        lo, hi = self.interval()
        centers = 0.5 * (self.edges[:-1] + self.edges[1:])
        return DensityGrid(centers, self.density, meta, lo, hi)


def histogram(events: ArrayLike, t_start: float, t_max: float, bin_width: float) -> Histogram:
    """Bin observed event times; NaN entries count as censored."""
    events = np.asarray(events, dtype=float)
    # the last bin is cut at t_max when the span is not a whole number of widths
    n_bins = max(1, math.ceil((t_max - t_start) / bin_width - 1e-9))
    edges = np.minimum(t_start + bin_width * np.arange(n_bins + 1), t_max)
    edges[-1] = t_max
    observed = events[~np.isnan(events)]
    counts, _ = np.histogram(observed, bins=edges)
    return Histogram(edges, counts.astype(np.int64), events.size, events.size - observed.size)


def estimate_histogram(result: SimulationResult, bin_width: Optional[float] = None) -> Histogram:
    width = bin_width or result.period / get_settings().simulation.bins_per_period
    return histogram(result.events, result.t_start, result.t_max, width)


def estimate_density(result: SimulationResult, bin_width: Optional[float] = None) -> DensityGrid:
    """
    Empirical density of the run's event times: count / (n_paths * width)
    per bin, width T/8 by default. All paths censored gives an empty grid.
    """
    hist = estimate_histogram(result, bin_width)
    if hist.censored == hist.n_paths:
        logger.info("all_paths_censored", n_paths=hist.n_paths, censor_rate=1.0)
    return hist.to_density("mc-histogram")


def estimate_psi_minus(spec: ModelSpec, cfg: SimConfig,
                       progress: Optional[ProgressCallback] = None) -> DensityGrid:
    """Histogram of the first rise above 1 - delta1 (minus branch only)."""
    result = simulate(spec, cfg, mode="minus_leg", progress=progress)
    return estimate_density(result)


@dataclass(frozen=True, eq=False)
class CumulativePassage:
    """Empirical P(tau <= t) with Wilson score intervals."""
    times: np.ndarray
    probability: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float


def cumulative_passage(result: SimulationResult, times: ArrayLike, level: float = 0.99) -> CumulativePassage:
    times = np.asarray(times, dtype=float)
    events = np.sort(result.events[~np.isnan(result.events)])
    n = result.n_paths
    k = np.searchsorted(events, times, side="right")
    p = k / n
    z = norm.ppf(0.5 + level / 2.0)
    denom = 1.0 + z ** 2 / n
    center = (p + z ** 2 / (2.0 * n)) / denom
    half = z * np.sqrt(p * (1.0 - p) / n + z ** 2 / (4.0 * n ** 2)) / denom
    return CumulativePassage(times, p, np.maximum(center - half, 0.0), np.minimum(center + half, 1.0), level)


def ks_distance(result: SimulationResult, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """
    max |F_n - F| over the recorded event times and t_max. Events are
    recorded at substep ends, so F_n is exact there; censored paths count
    as not yet crossed.
    """
    events = np.sort(result.events[~np.isnan(result.events)])
    n = result.n_paths
    times = np.append(np.unique(events), result.t_max)
    empirical = np.searchsorted(events, times, side="right") / n
    return float(np.max(np.abs(empirical - cdf(times))))


def ks_margin(n: int, alpha: float = 0.01, factor: float = 3.0) -> float:
    """factor * sqrt(ln(2/alpha) / 2n)."""
    return factor * math.sqrt(math.log(2.0 / alpha) / (2.0 * n))


__all__ = [
    "CumulativePassage",
    "Histogram",
    "PathOutcome",
    "SimConfig",
    "SimulationResult",
    "SubstepTables",
    "build_tables",
    "cumulative_passage",
    "estimate_density",
    "estimate_histogram",
    "estimate_psi_minus",
    "histogram",
    "ks_distance",
    "ks_margin",
    "path_stream",
    "simulate",
    "simulate_branch_plus",
    "simulate_path",
    "step_exact",
    "suggest_t_max_periods",
]
