"""
CyclingLab Observability Module

Structured logging with run correlation, and error classification.
"""
from .error_tracker import (
    ErrorClassification,
    ErrorRecord,
    ErrorTracker,
    get_error_tracker,
)
from .logging_config import (
    clear_correlation_context,
    configure_logging,
    generate_run_id,
    get_correlation_context,
    get_logger,
    log_phase_end,
    log_phase_start,
    set_correlation_context,
)

__all__ = [
    # Logging (structlog)
    "configure_logging",
    "get_logger",
    "set_correlation_context",
    "get_correlation_context",
    "clear_correlation_context",
    "generate_run_id",
    "log_phase_start",
    "log_phase_end",
    # Error Tracker
    "ErrorTracker",
    "ErrorRecord",
    "ErrorClassification",
    "get_error_tracker",
]
