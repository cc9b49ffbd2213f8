"""
CyclingLab Volterra Command

Solves one level-crossing problem on a uniform grid, attaches the
first-kind residual and the contraction bracket, and compares with the
closed form or the asymptotic density when one exists.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from cli.commands import CommandContext
from cli.tui.console import print_key_values, print_warning
from cli.tui.spinners import spinner
from src.emit import Provenance, write_columns
from src.errors import ScenarioError
from src.theory import psi_minus
from src.volterra import (
    ContractionConstants,
    FptProblem,
    check_first_kind,
    constant_boundary_density,
    constant_boundary_problem,
    fixed_point_prefactor,
    polynomial_problem,
    psi_down_problem,
    psi_minus_problem,
    solve_second_kind,
)

PROBLEMS = ("model-psi-minus", "model-psi-down", "constant-boundary", "custom")


def build_problem(ctx: CommandContext) -> FptProblem:
    opts = ctx.scenario.volterra
    sigma = opts.sigma or ctx.spec.sigma
    if opts.problem == "constant-boundary":
        return constant_boundary_problem(opts.boundary, sigma)
    if opts.problem == "custom":
        return polynomial_problem(opts.custom.v, opts.custom.d, sigma)
    if opts.problem == "model-psi-minus":
        return psi_minus_problem(ctx.spec).with_sigma(sigma)
    return psi_down_problem(ctx.spec, opts.start).with_sigma(sigma)


def oracle_values(ctx: CommandContext, problem: FptProblem, grid: np.ndarray) -> np.ndarray:
    opts = ctx.scenario.volterra
    if opts.problem == "constant-boundary":
        return constant_boundary_density(grid, opts.boundary, problem.sigma)
    if opts.problem == "model-psi-minus":
        return psi_minus(ctx.spec.with_sigma(problem.sigma), grid).value
    return np.full(grid.size, np.nan)


def run_volterra(ctx: CommandContext, problem_name: Optional[str] = None) -> list[Path]:
    if problem_name is not None:
        if problem_name not in PROBLEMS:
            raise ScenarioError(f"unknown problem {problem_name!r}; choose from {', '.join(PROBLEMS)}",
                                key="volterra.problem")
        ctx.scenario = ctx.scenario.model_copy(
            update={"volterra": ctx.scenario.volterra.model_copy(update={"problem": problem_name})}
        )
        ctx.provenance = Provenance(ctx.scenario.scenario_hash, ctx.scenario.sim.seed)
    opts = ctx.scenario.volterra
    problem = build_problem(ctx)
    supplied = ContractionConstants(**opts.constants.model_dump()) if opts.constants else None

    with spinner(f"Solving {problem.name}...") as s:
        sol = solve_second_kind(problem, opts.t_max, opts.n)
        s.update("Checking the first-kind identity...")
        report = check_first_kind(problem, sol)
        s.update("Iterating the fixed point...")
        fp = fixed_point_prefactor(problem, opts.t_max, opts.n, constants=supplied, iters=opts.iters)

    residual = np.full(sol.grid.size, np.nan)
    idx = np.searchsorted(sol.grid, report.times)
    residual[idx] = np.where(report.evaluated, report.relative, np.nan)
    oracle = oracle_values(ctx, problem, sol.grid)

    for note in fp.notes:
        print_warning(note)
    rows: list[tuple[str, object]] = [
        ("problem", problem.name),
        ("sigma", problem.sigma),
        ("grid points", opts.n),
        ("mass", sol.mass),
        ("halving change", sol.halving_change),
        ("first-kind sup relative residual", report.sup_relative),
        ("fixed-point iterations", fp.iterations),
        ("Delta, M1, M2, M3", ", ".join(f"{v:.4g}" for v in (
            fp.constants.Delta, fp.constants.M1, fp.constants.M2, fp.constants.M3))),
    ]
    finite = np.isfinite(oracle) & (oracle > 0)
    if np.any(finite):
        rows.append(("sup relative error vs oracle",
                     float(np.max(np.abs(sol.psi[finite] / oracle[finite] - 1.0)))))
    print_key_values("Volterra solution", rows)

    return [
        write_columns(ctx.path("volterra.csv"), "volterra", {
            "t": sol.grid,
            "psi": sol.psi,
            "c": sol.c,
            "c0": sol.c0,
            "bracket_lo": fp.bracket_lo,
            "bracket_hi": fp.bracket_hi,
            "first_kind_residual": residual,
            "deviation_bound": sol.deviation_bound,
            "oracle": oracle,
        }, ctx.provenance),
        write_columns(ctx.path("fixed_point.csv"), "fixed_point", {
            "t": fp.grid,
            "c": fp.c,
            "c0": fp.c0,
            "bracket_lo": fp.bracket_lo,
            "bracket_hi": fp.bracket_hi,
            "epsilon": fp.epsilon,
        }, ctx.provenance),
    ]
