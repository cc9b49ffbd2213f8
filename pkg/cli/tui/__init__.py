"""
CyclingLab TUI Components

Rich terminal output for the CLI.
"""

from cli.tui.console import (
    console,
    err_console,
    print_criteria,
    print_error,
    print_header,
    print_hypotheses,
    print_info,
    print_key_values,
    print_success,
    print_warning,
    print_written,
)
from cli.tui.spinners import LabSpinner, batch_progress, spinner

__all__ = [
    "console",
    "err_console",
    "print_header",
    "print_success",
    "print_warning",
    "print_error",
    "print_info",
    "print_hypotheses",
    "print_key_values",
    "print_criteria",
    "print_written",
    "spinner",
    "LabSpinner",
    "batch_progress",
]
