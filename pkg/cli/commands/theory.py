"""
CyclingLab Theory Command

Theory curves of p_+(t) over a number of periods, the fixed-t sweep in
|log sigma|, and the sigma sweep with its combined cycling file.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional

import numpy as np

from cli.commands import CommandContext
from cli.tui.console import print_key_values
from cli.tui.spinners import spinner
from src.coefficients import ModelSpec
from src.emit import write_columns
from src.errors import ScenarioError
from src.theory import (
    Regime,
    classify_regimes,
    kramers_time,
    p_plus_integral,
    p_plus_laplace,
    p_plus_metastable,
    p_plus_transient_bound,
    relaxation_time,
)
from src.variances import RateReport, find_rate_minimum, theta


def parse_sweep(text: str) -> np.ndarray:
    """
    "start:step:stop" in |log sigma|, stop included when it lies on the grid.
    """
    try:
        start, step, stop = (float(part) for part in text.split(":"))
    except ValueError as exc:
        raise ScenarioError(f"sigma sweep must be start:step:stop, got {text!r}", key="theory.sigma_sweep") from exc
    if step <= 0 or stop < start or start <= 0:
        raise ScenarioError(f"sigma sweep needs 0 < start <= stop and step > 0, got {text!r}",
                            key="theory.sigma_sweep")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def time_grid(spec: ModelSpec, periods: int, points_per_period: int) -> np.ndarray:
    return np.arange(1, periods * points_per_period + 1) * (spec.period / points_per_period)


def theory_columns(spec: ModelSpec, rate: RateReport, t: np.ndarray) -> dict[str, object]:
    regimes = classify_regimes(spec, rate, t)
    transient = np.array([r is Regime.TRANSIENT for r in regimes])
    bound = np.where(transient, p_plus_transient_bound(spec, rate, t).value, np.nan)
    th = theta(spec, rate, t)
    return {
        "t": t,
        "regime": [r.value for r in regimes],
        "p_plus_metastable": p_plus_metastable(spec, rate, t, strict=False).value,
        "p_plus_laplace": p_plus_laplace(spec, rate, t, strict=False).value,
        "transient_bound": bound,
        "theta": th,
        "profile_argument": (abs(math.log(spec.sigma)) - th) / spec.lambdaT,
    }


def _fixed_t(ctx: CommandContext, rate: RateReport, t_fixed: float) -> Path:
    opts = ctx.scenario.theory
    etas = np.linspace(opts.eta_min, opts.eta_max, opts.eta_points)
    pref, value = np.empty(etas.size), np.empty(etas.size)
    th = float(theta(ctx.spec, rate, t_fixed))
    for i, eta in enumerate(etas):
        tv = p_plus_metastable(ctx.spec.with_sigma(math.exp(-eta)), rate, t_fixed, strict=False)
        pref[i], value[i] = float(tv.prefactor[0]), float(tv.value[0])
    return write_columns(ctx.path("theory_fixed_t.csv"), "theory_fixed_t", {
        "eta": etas,
        "sigma": np.exp(-etas),
        "prefactor": pref,
        "p_plus_metastable": value,
        "profile_argument": (etas - th) / ctx.spec.lambdaT,
    }, ctx.provenance)


def _sigma_sweep(ctx: CommandContext, rate: RateReport, etas: np.ndarray, t: np.ndarray) -> list[Path]:
    opts = ctx.scenario.theory
    written: list[Path] = []
    last = t[-opts.points_per_period:]
    rows: dict[str, list[np.ndarray]] = {"sigma": [], "eta": [], "t": [], "prefactor": []}
    for i, eta in enumerate(etas):
        spec = ctx.spec.with_sigma(math.exp(-eta))
        written.append(write_columns(ctx.path(f"theory_sweep_{i:03d}.csv"), "theory",
                                     theory_columns(spec, rate, t), ctx.provenance))
        pref = p_plus_metastable(spec, rate, last, strict=False).prefactor
        rows["sigma"].append(np.full(last.size, spec.sigma))
        rows["eta"].append(np.full(last.size, eta))
        rows["t"].append(last)
        rows["prefactor"].append(np.asarray(pref))
    written.append(write_columns(ctx.path("cycling.csv"), "cycling",
                                 {k: np.concatenate(v) for k, v in rows.items()}, ctx.provenance))
    return written


def run_theory(ctx: CommandContext, fixed_t: Optional[float] = None,
               sigma_sweep: Optional[str] = None) -> list[Path]:
    spec, opts = ctx.spec, ctx.scenario.theory
    fixed_t = fixed_t if fixed_t is not None else opts.fixed_t
    sigma_sweep = sigma_sweep if sigma_sweep is not None else opts.sigma_sweep

    with spinner("Locating rate minimum...") as s:
        rate = find_rate_minimum(spec)
        t = time_grid(spec, opts.periods, opts.points_per_period)
        s.update("Evaluating theory curves...")
        written = [write_columns(ctx.path("theory.csv"), "theory",
                                 theory_columns(spec, rate, t), ctx.provenance)]
        if opts.integral:
            s.update("Integrating the two-leg density...")
            tv = p_plus_integral(spec, rate, t)
            written.append(write_columns(ctx.path("theory_integral.csv"), "theory_integral", {
                "t": t, "p_plus_integral": tv.value, "log_p_plus_integral": tv.log_value,
            }, ctx.provenance))
        if fixed_t is not None:
            s.update("Sweeping |log sigma| at fixed t...")
            written.append(_fixed_t(ctx, rate, fixed_t))
        if sigma_sweep:
            s.update("Sweeping sigma...")
            written += _sigma_sweep(ctx, rate, parse_sweep(sigma_sweep), t)

    print_key_values("Time scales", [
        ("relaxation time 2|log sigma|/lambda", relaxation_time(spec)),
        ("Kramers time exp(R^2/2 sigma^2)", kramers_time(rate, spec.sigma)),
        ("R^2", rate.R_sq),
        ("C0", rate.C0),
    ])
    return written
