"""
CyclingLab Profile Command

The cycling profile P(x) by both representations, and its Fourier
coefficients.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from cli.commands import CommandContext
from cli.tui.console import print_key_values
from src.emit import write_columns
from src.profile import CyclingParams, fourier_coefficient, fourier_terms, profile_fourier, profile_sum


def run_profile(ctx: CommandContext) -> list[Path]:
    opts = ctx.scenario.profile
    lt = opts.lambdaT or ctx.spec.lambdaT
    p = CyclingParams(lt)
    x = np.linspace(opts.x_min, opts.x_max, opts.points)
    direct, series = profile_sum(p, x), profile_fourier(p, x)
    diff = np.abs(direct - series)

    q = np.arange(fourier_terms(p) + 1)
    coeffs = fourier_coefficient(p, q)
    print_key_values("Cycling profile", [
        ("lambdaT", lt),
        ("harmonics", int(q[-1])),
        ("max |P_sum - P_fourier|", float(diff.max())),
        ("mean of P", float(np.mean(profile_sum(p, np.arange(4096) / 4096.0)))),
    ])
    return [
        write_columns(ctx.path("profile.csv"), "profile",
                      {"x": x, "p_sum": direct, "p_fourier": series, "abs_diff": diff},
                      ctx.provenance),
        write_columns(ctx.path("profile_coefficients.csv"), "profile_coefficients",
                      {"q": q, "re": coeffs.real, "im": coeffs.imag, "abs": np.abs(coeffs)},
                      ctx.provenance),
    ]
