"""
CyclingLab Simulate Command

Monte Carlo histogram of the passage time through +1 and, optionally,
of the first rise above 1 - delta1 on the minus branch.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from cli.commands import CommandContext
from cli.tui.console import print_key_values, print_warning
from cli.tui.spinners import batch_progress
from src.emit import write_columns
from src.montecarlo import Histogram, SimulationResult, estimate_histogram, simulate


def histogram_columns(hist: Histogram) -> dict[str, object]:
    lo, hi = hist.interval()
    return {
        "t_lo": hist.edges[:-1],
        "t_hi": hist.edges[1:],
        "count": hist.counts,
        "density": hist.density,
        "ci_lo": lo,
        "ci_hi": hi,
        "censored_total": hist.censored,
    }


def _bin_width(ctx: CommandContext) -> float:
    bins = ctx.scenario.simulate.bins_per_period or ctx.settings.simulation.bins_per_period
    return ctx.spec.period / bins


def _summary(title: str, result: SimulationResult) -> None:
    events = result.events[~np.isnan(result.events)]
    print_key_values(title, [
        ("paths", result.n_paths),
        ("events", result.n_events),
        ("censored fraction", result.censored_fraction),
        ("horizon t_max", result.t_max),
        ("mean event time", float(events.mean()) if events.size else float("nan")),
        ("mean switches", float(result.n_switches.mean()) if result.n_paths else float("nan")),
    ])
    if result.n_events == 0:
        print_warning("every path was censored; the histogram is empty")


def run_simulate(ctx: CommandContext) -> list[Path]:
    cfg = ctx.scenario.to_sim_config(ctx.settings, ctx.threads)
    width = _bin_width(ctx)
    written: list[Path] = []

    with batch_progress("Simulating passages") as advance:
        result = simulate(ctx.spec, cfg, progress=advance)
    _summary("Passage through +1", result)
    written.append(write_columns(ctx.path("histogram.csv"), "histogram",
                                 histogram_columns(estimate_histogram(result, width)), ctx.provenance))

    if ctx.scenario.simulate.psi_minus:
        with batch_progress("Simulating minus leg") as advance:
            leg = simulate(ctx.spec, cfg, mode="minus_leg", progress=advance)
        _summary("First rise above 1 - delta1", leg)
        written.append(write_columns(ctx.path("psi_minus.csv"), "histogram",
                                     histogram_columns(estimate_histogram(leg, width)), ctx.provenance))
    return written
