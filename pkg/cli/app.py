"""
CyclingLab CLI Application

Main Typer application with all commands registered. Every command reads
one scenario file; global flags override its values.
"""

import time
from pathlib import Path
from typing import Callable, List, Optional, TypeVar

import typer

from cli.commands import CommandContext, GlobalOptions, build_context
from cli.tui.console import console, err_console, print_error, print_header, print_written
from src import __version__
from src.config import get_settings
from src.observability import (
    ErrorClassification,
    configure_logging,
    generate_run_id,
    get_correlation_context,
    get_error_tracker,
    get_logger,
    log_phase_end,
    log_phase_start,
    set_correlation_context,
)

logger = get_logger("cli")

T = TypeVar("T")

# ============================================================================
# Main Application
# ============================================================================

app = typer.Typer(
    name="cyclinglab",
    help="CyclingLab - noise-induced passage through an unstable periodic orbit.\n\n"
         "Closed-form theory, Volterra level-crossing solvers and an exact Monte Carlo "
         "simulator, driven by one scenario file.",
    add_completion=False,
    no_args_is_help=True,
    rich_markup_mode="rich",
)


def version_callback(value: bool):
    """Print version and exit."""
    if value:
        console.print(f"[bold cyan]CyclingLab[/] version [bold]{__version__}[/]")
        raise typer.Exit()


@app.callback()
def main(
    ctx: typer.Context,
    config: Optional[Path] = typer.Option(
        None, "--config", "-c",
        help="Scenario YAML file (default: the bundled reference scenario).",
        exists=True, dir_okay=False, readable=True,
    ),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="Output directory for CSV files."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Monte Carlo seed.", min=0),
    threads: Optional[int] = typer.Option(
        None, "--threads", "-j",
        help="Worker processes (default: $CYCLINGLAB_THREADS, then settings).", min=1,
    ),
    sigma: Optional[float] = typer.Option(None, "--sigma", help="Noise intensity override.", min=0.0),
    log_level: Optional[str] = typer.Option(None, "--log-level", help="DEBUG, INFO, WARNING or ERROR."),
    no_color: bool = typer.Option(False, "--no-color", help="Disable colored output.", envvar="NO_COLOR"),
    version: bool = typer.Option(
        False, "--version", "-v",
        callback=version_callback, is_eager=True,
        help="Show version and exit.",
    ),
):
    """
    CyclingLab - noise-induced passage through an unstable periodic orbit.

    [bold cyan]Quick Start:[/]

        cyclinglab analyze

        cyclinglab --sigma 0.1 theory --sigma-sweep 0.5:0.2:5

        cyclinglab --config my.yml --threads 4 simulate

        cyclinglab validate --skip mc
    """
    if no_color:
        console.no_color = True
        err_console.no_color = True

    settings = get_settings()
    configure_logging(
        log_level=(log_level or settings.logging.level).upper(),
        log_dir=settings.logging.log_dir,
        json_output=settings.logging.json_output,
        file_output=settings.logging.file_enabled,
        force=True,
    )
    set_correlation_context(run_id=generate_run_id(), command=ctx.invoked_subcommand)
    ctx.obj = GlobalOptions(config=config, out=out, seed=seed, threads=threads, sigma=sigma)


def _execute(ctx: typer.Context, name: str, body: Callable[[CommandContext], T]) -> T:
    """Build the command context, run the body as one phase, map errors to exit codes."""
    options: GlobalOptions = ctx.obj or GlobalOptions()
    started = time.perf_counter()
    try:
        cmd_ctx = build_context(options)
        set_correlation_context(scenario_hash=cmd_ctx.scenario.scenario_hash)
        log_phase_start(name, scenario=cmd_ctx.scenario.name, sigma=cmd_ctx.spec.sigma)
        result = body(cmd_ctx)
    except (typer.Exit, typer.Abort):
        raise
    except KeyboardInterrupt:
        err_console.print("\n[dim]Cancelled.[/]")
        raise typer.Exit(130)
    except Exception as exc:
        classification = ErrorClassification.from_exception(exc)
        run_id = get_correlation_context()["run_id"] or "unknown"
        get_error_tracker().record_exception(run_id, exc, command=name,
                                             phase=get_correlation_context()["phase"])
        logger.error("command_failed", command=name, error=str(exc),
                     classification=classification.value)
        print_error(f"{name}: {exc}")
        raise typer.Exit(classification.exit_code)
    log_phase_end(name, duration_ms=(time.perf_counter() - started) * 1000.0)
    return result


# ============================================================================
# Commands
# ============================================================================

@app.command()
def analyze(ctx: typer.Context):
    """
    Hypothesis report, rate-function minimum and periodic curves.

    Writes hypotheses.csv, rate.csv, curves.csv and rho0.csv. Failed
    hypotheses are reported, not fatal.
    """
    from cli.commands.analyze import run_analyze

    def body(c: CommandContext):
        print_header("Analyze", f"{c.scenario.name} (sigma = {c.spec.sigma:g})")
        print_written(run_analyze(c))

    _execute(ctx, "analyze", body)


@app.command()
def profile(ctx: typer.Context):
    """
    Cycling profile P(x) by lattice sum and Fourier series.

    Writes profile.csv and profile_coefficients.csv.
    """
    from cli.commands.profile import run_profile

    _execute(ctx, "profile", lambda c: print_written(run_profile(c)))


@app.command()
def theory(
    ctx: typer.Context,
    fixed_t: Optional[float] = typer.Option(
        None, "--fixed-t", help="Also sweep |log sigma| at this fixed time.", min=0.0,
    ),
    sigma_sweep: Optional[str] = typer.Option(
        None, "--sigma-sweep", help="start:step:stop in |log sigma|; one CSV per sigma plus cycling.csv.",
    ),
):
    """
    Theory curves of the passage density p_+(t) with regime labels.

    Writes theory.csv, and theory_integral.csv, theory_fixed_t.csv,
    theory_sweep_*.csv and cycling.csv when requested.
    """
    from cli.commands.theory import run_theory

    _execute(ctx, "theory", lambda c: print_written(run_theory(c, fixed_t, sigma_sweep)))


@app.command()
def volterra(
    ctx: typer.Context,
    problem: Optional[str] = typer.Option(
        None, "--problem", "-p",
        help="model-psi-minus, model-psi-down, constant-boundary or custom.",
    ),
):
    """
    Solve a Volterra level-crossing problem with its error bracket.

    Writes volterra.csv and fixed_point.csv.
    """
    from cli.commands.volterra import run_volterra

    _execute(ctx, "volterra", lambda c: print_written(run_volterra(c, problem)))


@app.command()
def simulate(ctx: typer.Context):
    """
    Monte Carlo histogram of the passage time.

    Writes histogram.csv, and psi_minus.csv when enabled in the scenario.
    A fully censored run still exits 0.
    """
    from cli.commands.simulate import run_simulate

    _execute(ctx, "simulate", lambda c: print_written(run_simulate(c)))


@app.command()
def validate(
    ctx: typer.Context,
    skip: List[str] = typer.Option(
        [], "--skip", help="Criterion to skip (repeatable, comma lists allowed); 'mc' skips Monte Carlo.",
    ),
    tolerance: List[str] = typer.Option(
        [], "--tolerance", "-t", help="NAME=VALUE tolerance override (repeatable).",
    ),
):
    """
    Run the acceptance criteria and schema-check every CSV.

    Writes validate.csv. Exits 1 when any criterion or schema check fails.
    """
    from cli.commands.validate import run_validate

    passed = _execute(ctx, "validate", lambda c: run_validate(c, skip, tolerance))
    if not passed:
        raise typer.Exit(1)


if __name__ == "__main__":
    app()
