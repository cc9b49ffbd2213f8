"""
CyclingLab Analyze Command

Hypothesis report, rate-function minimum and the periodic curves of a
scenario.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional

import numpy as np

from cli.commands import CommandContext
from cli.tui.console import print_hypotheses, print_key_values, print_warning
from src.coefficients import check_hypotheses, v_star
from src.emit import write_columns, write_rows
from src.errors import DegenerateMinimumError
from src.observability import get_logger
from src.theory import kramers_time, relaxation_time, rho0_sq
from src.variances import (
    RateReport,
    find_rate_minimum,
    rho_per_sq,
    theta,
    theta_prime,
    v_hat_per_plus,
    v_per_minus,
)

logger = get_logger("cli.analyze")


def rate_rows(ctx: CommandContext, rate: Optional[RateReport], reason: str = "") -> list[tuple[str, object]]:
    spec = ctx.spec
    rows: list[tuple[str, object]] = [
        ("lam", spec.lam),
        ("period", spec.period),
        ("lambdaT", spec.lambdaT),
        ("sigma", spec.sigma),
        ("relaxation_time", relaxation_time(spec)),
    ]
    if rate is None:
        return rows + [("status", f"degenerate: {reason}")]
    rows += [
        ("s_star", rate.s_star),
        ("R", rate.R),
        ("R_sq", rate.R_sq),
        ("rho_dd", rate.rho_dd),
        ("C0", rate.C0),
        ("C", rate.C),
        ("gamma0", rate.gamma0),
        ("theta0", rate.theta0),
        ("v_hat_star", rate.v_hat_star),
        ("v_minus_star", rate.v_minus_star),
        ("v_minus_zero", rate.v_minus_zero),
        ("alpha_star", rate.alpha_star),
        ("tied_minima", len(rate.ties)),
        ("weak_minimum", rate.weak),
        ("kramers_time", kramers_time(rate, spec.sigma)),
        ("status", "ok"),
    ]
    return rows


def run_analyze(ctx: CommandContext) -> list[Path]:
    spec, opts, prov = ctx.spec, ctx.scenario.analyze, ctx.provenance
    written: list[Path] = []

    report = check_hypotheses(spec)
    print_hypotheses(report)
    written.append(write_rows(
        ctx.path("hypotheses.csv"), "hypotheses",
        [(c.name, c.passed, c.detail, c.witness_t, c.witness_value) for c in report.checks],
        prov,
    ))
    if not report.all_passed:
        print_warning(f"hypotheses not satisfied: {', '.join(report.failures())}")

    rate: Optional[RateReport] = None
    reason = ""
    if report.h1.passed:
        try:
            rate = find_rate_minimum(spec)
        except DegenerateMinimumError as exc:
            reason = str(exc)
            print_warning(f"rate function minimum is degenerate: {exc}")
            logger.info("rate_minimum_degenerate", error=reason)
    else:
        reason = "H1 failed"
    rows = rate_rows(ctx, rate, reason)
    print_key_values("Rate function", rows)
    written.append(write_rows(ctx.path("rate.csv"), "rate", rows, prov))

    if not report.h1.passed:
        return written

    n = opts.points_per_period * opts.periods
    t = np.arange(n) * (spec.period / opts.points_per_period)
    nan = np.full(t.size, np.nan)
    written.append(write_columns(ctx.path("curves.csv"), "curves", {
        "t": t,
        "v_star": v_star(spec, t),
        "v_per_minus": v_per_minus(spec, t),
        "v_hat_per_plus": v_hat_per_plus(spec, t),
        "rho_per_sq": rho_per_sq(spec, t),
        "theta": theta(spec, rate, t) if rate is not None else nan,
        "theta_prime": theta_prime(spec, t),
    }, prov))

    finals = list(opts.rho0_final_periods)[:4]
    finals += [math.nan] * (4 - len(finals))
    horizon = max((p for p in finals if not math.isnan(p)), default=1.0)
    s = np.arange(1, math.ceil(horizon * opts.points_per_period)) * (spec.period / opts.points_per_period)
    columns: dict[str, object] = {"s": s}
    for i, periods in enumerate(finals, start=1):
        if math.isnan(periods):
            columns[f"t{i}"] = np.full(s.size, np.nan)
            continue
        t_final = periods * spec.period
        inside = s < t_final
        values = np.full(s.size, np.nan)
        values[inside] = rho0_sq(spec, t_final, s[inside])
        columns[f"t{i}"] = values
    written.append(write_columns(ctx.path("rho0.csv"), "rho0", columns, prov))
    return written
