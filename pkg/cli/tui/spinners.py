"""
CyclingLab Spinners Module

Spinners for analytic phases and a batch progress bar for Monte Carlo runs.
Both render on stderr and disappear when done.
"""

from contextlib import contextmanager
from typing import Callable, Generator, Optional

from rich.console import Console
from rich.live import Live
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.spinner import Spinner

from cli.tui.console import err_console


class LabSpinner:
    """
    Context manager for a transient spinner.

    Usage:
        with LabSpinner("Locating rate minimum...") as spinner:
            rate = find_rate_minimum(spec)
            spinner.update("Evaluating theory curves...")
    """

    def __init__(self, message: str, console: Optional[Console] = None):
        self.console = console or err_console
        self._text = message
        self._live: Optional[Live] = None

    def _render(self) -> Spinner:
        return Spinner("dots", text=self._text, style="cyan")

    def update(self, message: str):
        self._text = message
        if self._live:
            self._live.update(self._render())

    def __enter__(self) -> "LabSpinner":
        self._live = Live(self._render(), console=self.console, refresh_per_second=10, transient=True)
        self._live.__enter__()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self._live:
            self._live.__exit__(exc_type, exc_val, exc_tb)
        return False


@contextmanager
def spinner(message: str, console: Optional[Console] = None) -> Generator[LabSpinner, None, None]:
    with LabSpinner(message, console) as s:
        yield s


@contextmanager
def batch_progress(description: str) -> Generator[Callable[[int, int], None], None, None]:
    """Yield a (done, total) callback that drives a progress bar."""
    progress = Progress(
        TextColumn("[cyan]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=err_console,
        transient=True,
    )
    with progress:
        task = progress.add_task(description, total=None)

        def advance(done: int, total: int) -> None:
            progress.update(task, completed=done, total=total)

        yield advance
