"""
CyclingLab Logging Configuration

structlog on top of the standard logging handlers. Every entry carries the
run correlation fields (run id, command, scenario hash, phase) so the lines of
one CLI invocation can be pulled out of a shared log file.
"""
from __future__ import annotations

import logging
import sys
import uuid
from contextvars import ContextVar
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any

import structlog
from structlog.types import EventDict, Processor

SERVICE = "cyclinglab"
LOG_FILE = "cyclinglab.log"
CORRELATION_FIELDS = ("run_id", "command", "scenario_hash", "phase")

_correlation: dict[str, ContextVar[str | None]] = {
    name: ContextVar(name, default=None) for name in CORRELATION_FIELDS
}
_configured = False


# =============================================================================
# RUN CORRELATION
# =============================================================================
def generate_run_id() -> str:
    return uuid.uuid4().hex[:16]


def set_correlation_context(**fields: str | None) -> None:
    """Update the given correlation fields; ``None`` leaves a field as it is."""
    for name, value in fields.items():
        if name not in _correlation:
            raise KeyError(f"unknown correlation field {name!r}")
        if value is not None:
            _correlation[name].set(value)


def get_correlation_context() -> dict[str, str | None]:
    return {name: var.get() for name, var in _correlation.items()}


def clear_correlation_context() -> None:
    for var in _correlation.values():
        var.set(None)


def _lab_fields(logger: logging.Logger, method_name: str, event_dict: EventDict) -> EventDict:
    """Service name, correlation fields and a readable duration."""
    event_dict.setdefault("service", SERVICE)
    for name, value in get_correlation_context().items():
        if value:
            event_dict.setdefault(name, value)
    if "duration_ms" in event_dict:
        event_dict["duration"] = f"{event_dict['duration_ms']:.2f}ms"
    return event_dict


# =============================================================================
# CONFIGURATION
# =============================================================================
def _handlers(
    console_output: bool, file_output: bool, log_dir: str, max_bytes: int, backup_count: int
) -> list[logging.Handler]:
    handlers: list[logging.Handler] = []
    if console_output:
        # stdout is reserved for command output
        handlers.append(logging.StreamHandler(sys.stderr))
    if file_output:
        directory = Path(log_dir)
        directory.mkdir(parents=True, exist_ok=True)
        handlers.append(RotatingFileHandler(
            directory / LOG_FILE, maxBytes=max_bytes, backupCount=backup_count, encoding="utf-8",
        ))
    return handlers


def configure_logging(
    log_level: str = "INFO",
    log_dir: str = "logs",
    json_output: bool = False,
    console_output: bool = True,
    file_output: bool = False,
    max_bytes: int = 5 * 1024 * 1024,
    backup_count: int = 3,
    force: bool = False,
) -> None:
    """
    Configure structured logging for the process.

    A second call is a no-op unless ``force`` is set; the CLI forces it once
    per invocation after reading ``logging`` from the settings file.

    Args:
        log_level: DEBUG, INFO, WARNING or ERROR
        log_dir: Directory of the rotating log file
        json_output: Render JSON lines instead of key=value text
        console_output: Log to standard error
        file_output: Log to ``<log_dir>/cyclinglab.log``
        max_bytes: Rotation size of the log file
        backup_count: Rotated files kept
        force: Reconfigure even when already configured
    """
    global _configured
    if _configured and not force:
        return

    pre_chain: list[Processor] = [
        structlog.stdlib.add_log_level,
        structlog.stdlib.add_logger_name,
        structlog.processors.TimeStamper(fmt="iso", utc=True, key="timestamp"),
        _lab_fields,
        structlog.processors.StackInfoRenderer(),
    ]
    renderer: Processor = (
        structlog.processors.JSONRenderer(sort_keys=True)
        if json_output
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    formatter = structlog.stdlib.ProcessorFormatter(
        foreign_pre_chain=pre_chain,
        processors=[structlog.stdlib.ProcessorFormatter.remove_processors_meta, renderer],
    )

    root = logging.getLogger()
    root.handlers = []
    root.setLevel(logging.getLevelName(log_level.upper()))
    for handler in _handlers(console_output, file_output, log_dir, max_bytes, backup_count):
        handler.setFormatter(formatter)
        root.addHandler(handler)

    structlog.configure(
        processors=[*pre_chain, structlog.stdlib.ProcessorFormatter.wrap_for_formatter],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )
    _configured = True


def get_logger(name: str | None = None) -> structlog.stdlib.BoundLogger:
    """Structured logger; library use without the CLI logs warnings and up."""
    if not _configured:
        configure_logging(log_level="WARNING")
    return structlog.get_logger(name or SERVICE)


# =============================================================================
# PHASES
# =============================================================================
def log_phase_start(phase: str, **fields: Any) -> None:
    """Enter a phase: later entries carry it until the next phase starts."""
    set_correlation_context(phase=phase)
    get_logger("phase").info(f"{phase.lower()}_started", **fields)


def log_phase_end(phase: str, duration_ms: float, **fields: Any) -> None:
    get_logger("phase").info(f"{phase.lower()}_completed", duration_ms=duration_ms, **fields)
