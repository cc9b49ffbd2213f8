"""
CyclingLab Console Module

Rich console configuration and styled output helpers for the CLI.
Summaries go to stdout; progress and status lines go to stderr.
"""

from pathlib import Path
from typing import Iterable, Optional

from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text
from rich.theme import Theme

# ============================================================================
# Theme
# ============================================================================

CYCLINGLAB_THEME = Theme({
    "brand.primary": "bold cyan",
    "brand.secondary": "bold magenta",

    "status.success": "bold green",
    "status.warning": "bold yellow",
    "status.error": "bold red",
    "status.info": "bold blue",

    "regime.transient": "yellow",
    "regime.metastable": "green",
    "regime.asymptotic": "magenta",

    "ui.border": "cyan",
    "ui.dim": "dim white",
})

console = Console(theme=CYCLINGLAB_THEME)
err_console = Console(theme=CYCLINGLAB_THEME, stderr=True)


# ============================================================================
# Header & Status Helpers
# ============================================================================

def print_header(title: str, subtitle: Optional[str] = None):
    """Print a branded header panel."""
    content = Text()
    content.append(title, style="bold white")
    if subtitle:
        content.append(f"\n{subtitle}", style="dim white")
    console.print(Panel(content, title="[bold cyan]CyclingLab[/]", border_style="cyan", padding=(0, 2)))


def print_success(message: str):
    err_console.print(f"[status.success]✓[/] {message}")


def print_warning(message: str):
    err_console.print(f"[status.warning]⚠[/] {message}")


def print_error(message: str):
    err_console.print(f"[status.error]✗[/] {message}")


def print_info(message: str):
    err_console.print(f"[status.info]ℹ[/] {message}")


def _mark(passed: bool) -> str:
    return "[status.success]✓[/]" if passed else "[status.error]✗[/]"


def _num(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6g}"


# ============================================================================
# Reports
# ============================================================================

def print_hypotheses(report) -> None:
    """Table of a HypothesisReport."""
    table = Table(title="Hypotheses", border_style="cyan", header_style="bold white")
    table.add_column("", justify="center")
    table.add_column("Name", style="bold")
    table.add_column("Detail")
    table.add_column("Witness t", justify="right", style="dim")
    for check in report.checks:
        table.add_row(_mark(check.passed), check.name, check.detail, _num(check.witness_t))
    console.print(table)
    console.print(
        f"[dim]Delta = {report.Delta:.6g}   Delta0 = {report.Delta0:.6g}   "
        f"v* range [{report.vunder:.6g}, {report.vbar:.6g}][/]"
    )


def print_key_values(title: str, rows: Iterable[tuple[str, object]]) -> None:
    table = Table(title=title, border_style="cyan", header_style="bold white", show_header=False)
    table.add_column("Key", style="bold")
    table.add_column("Value", justify="right")
    for key, value in rows:
        table.add_row(key, _num(value) if isinstance(value, float) else str(value))
    console.print(table)


def print_criteria(results) -> None:
    """Pass/fail table of validation criteria."""
    table = Table(title="Acceptance criteria", border_style="cyan", header_style="bold white")
    table.add_column("", justify="center")
    table.add_column("Criterion", style="bold")
    table.add_column("Measured", justify="right")
    table.add_column("Tolerance", justify="right")
    table.add_column("Time (s)", justify="right", style="dim")
    table.add_column("Detail", style="italic")
    for r in results:
        table.add_row(_mark(r.passed), r.name, _num(r.measured), _num(r.tolerance),
                      f"{r.runtime_s:.2f}", r.detail)
    console.print(table)
    passed = sum(r.passed for r in results)
    style = "status.success" if passed == len(results) else "status.error"
    console.print(f"[{style}]{passed}/{len(results)} criteria passed[/]")


def print_written(paths: Iterable[Path]) -> None:
    for path in paths:
        print_success(f"wrote {path}")
