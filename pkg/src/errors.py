"""
CyclingLab Errors

Exception hierarchy shared by every module. Hypothesis failures are not
errors: they are reported as data in a HypothesisReport.
"""

from __future__ import annotations

from typing import Any, Optional


class CyclingLabError(Exception):
    """Base class for all lab errors."""


class ScenarioError(CyclingLabError):
    """Malformed or incomplete scenario/settings file."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = ""
        if key:
            where += f" [key: {key}]"
        if line is not None:
            where += f" [line: {line}]"
        super().__init__(f"{message}{where}")


class ModelError(CyclingLabError):
    """Coefficients that violate the model's structural requirements."""


class QuadratureError(CyclingLabError):
    """Quadrature did not converge or produced a negative variance."""


class DegenerateMinimumError(CyclingLabError):
    """The rate function has a flat or non-quadratic minimum."""

    def __init__(self, message: str, second_derivative: float = 0.0):
        self.second_derivative = second_derivative
        super().__init__(message)


class RegimeError(CyclingLabError):
    """A formula was evaluated outside its validity window."""

    def __init__(self, message: str, regime: str = "", thresholds: Optional[dict[str, Any]] = None):
        self.regime = regime
        self.thresholds = thresholds or {}
        super().__init__(message)


class GridError(CyclingLabError):
    """Integral-equation grid too coarse or problem invariants breached."""
