"""
CyclingLab Error Tracker

Maps lab exceptions to a classification (and through it to the CLI exit
code) and keeps the failures of the current process for the run summary.
"""
from __future__ import annotations

import traceback
import uuid
from collections import Counter, deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any

from ..errors import (
    DegenerateMinimumError,
    GridError,
    ModelError,
    QuadratureError,
    RegimeError,
    ScenarioError,
)

# Attributes of lab exceptions copied into the record context
_EXCEPTION_FIELDS = ("key", "line", "regime", "thresholds", "second_derivative")


class ErrorClassification(str, Enum):
    """What went wrong, from the user's point of view."""
    CONFIGURATION_ERROR = "configuration_error"
    MODEL_ERROR = "model_error"
    NUMERICAL_ERROR = "numerical_error"
    REGIME_ERROR = "regime_error"
    INTERNAL_ERROR = "internal_error"

    @classmethod
    def from_exception(cls, exc: BaseException) -> "ErrorClassification":
        for types, classification in _CLASSIFIED:
            if isinstance(exc, types):
                return classification
        return cls.INTERNAL_ERROR

    @property
    def exit_code(self) -> int:
        """Process exit code used by the CLI."""
        return _EXIT_CODES[self]


_CLASSIFIED: tuple[tuple[tuple[type[BaseException], ...], ErrorClassification], ...] = (
    ((ScenarioError,), ErrorClassification.CONFIGURATION_ERROR),
    ((ModelError, DegenerateMinimumError), ErrorClassification.MODEL_ERROR),
    ((QuadratureError, GridError, FloatingPointError), ErrorClassification.NUMERICAL_ERROR),
    ((RegimeError,), ErrorClassification.REGIME_ERROR),
)

_EXIT_CODES = {
    ErrorClassification.CONFIGURATION_ERROR: 2,
    ErrorClassification.MODEL_ERROR: 3,
    ErrorClassification.NUMERICAL_ERROR: 4,
    ErrorClassification.REGIME_ERROR: 5,
    ErrorClassification.INTERNAL_ERROR: 1,
}


@dataclass(frozen=True)
class ErrorRecord:
    """One failure, with the correlation fields it happened under."""
    error_id: str
    run_id: str
    error_type: str
    message: str
    classification: ErrorClassification
    command: str | None = None
    phase: str | None = None
    stack_trace: str = ""
    context: dict[str, Any] = field(default_factory=dict)
    timestamp: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    @classmethod
    def from_exception(
        cls,
        run_id: str,
        exc: BaseException,
        command: str | None = None,
        phase: str | None = None,
        context: dict[str, Any] | None = None,
    ) -> "ErrorRecord":
        ctx = dict(context or {})
        for attr in _EXCEPTION_FIELDS:
            value = getattr(exc, attr, None)
            if value not in (None, "", {}):
                ctx[attr] = value
        return cls(
            error_id=f"err_{uuid.uuid4().hex[:12]}",
            run_id=run_id,
            error_type=type(exc).__name__,
            message=str(exc),
            classification=ErrorClassification.from_exception(exc),
            command=command,
            phase=phase,
            stack_trace="".join(traceback.format_exception(exc)),
            context=ctx,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "error_id": self.error_id,
            "run_id": self.run_id,
            "timestamp": self.timestamp.isoformat(),
            "error_type": self.error_type,
            "message": self.message,
            "classification": self.classification.value,
            "command": self.command,
            "phase": self.phase,
            "context": self.context,
            "stack_trace": self.stack_trace,
        }


class ErrorTracker:
    """Bounded history of failures plus a count per classification.

    Counts cover every recorded failure, including those the history has
    already dropped.
    """

    def __init__(self, max_errors: int = 500):
        self._errors: deque[ErrorRecord] = deque(maxlen=max_errors)
        self._counts: Counter[ErrorClassification] = Counter()

    def record_exception(
        self,
        run_id: str,
        exc: BaseException,
        command: str | None = None,
        phase: str | None = None,
        context: dict[str, Any] | None = None,
    ) -> ErrorRecord:
        record = ErrorRecord.from_exception(run_id, exc, command, phase, context)
        self._errors.append(record)
        self._counts[record.classification] += 1
        return record

    def get_recent_errors(self, limit: int = 10) -> list[ErrorRecord]:
        return list(self._errors)[-limit:]

    def get_errors_by_run(self, run_id: str) -> list[ErrorRecord]:
        return [e for e in self._errors if e.run_id == run_id]

    def get_error_stats(self) -> dict[str, Any]:
        return {
            "total_errors": sum(self._counts.values()),
            "by_classification": {c.value: n for c, n in self._counts.items() if n},
        }

    def clear(self) -> None:
        self._errors.clear()
        self._counts.clear()


_error_tracker: ErrorTracker | None = None


def get_error_tracker() -> ErrorTracker:
    """Process-wide tracker used by the CLI."""
    global _error_tracker
    if _error_tracker is None:
        _error_tracker = ErrorTracker()
    return _error_tracker
