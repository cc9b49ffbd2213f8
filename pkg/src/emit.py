"""
CyclingLab Emit

CSV writers for every command. Each file starts with one provenance
comment line and a header row registered under its kind:

    # provenance: scenario=<hash> seed=<seed> version=<version> kind=<kind>
    t,v_star,...

Numbers are written with a fixed format so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .observability import get_logger

logger = get_logger("emit")

PROVENANCE_PREFIX = "# provenance:"
_PROVENANCE_RE = re.compile(
    r"^# provenance: scenario=(?P<scenario>\S+) seed=(?P<seed>\S+) "
    r"version=(?P<version>\S+) kind=(?P<kind>\S+)$"
)

# Columns that hold text; everything else must parse as a float ("nan" allowed)
_TEXT_COLUMNS = {"regime", "name", "passed", "detail", "hypothesis", "witness_t", "key", "value", "meta"}


# =============================================================================
# SCHEMAS
# =============================================================================

SCHEMAS: dict[str, tuple[str, ...]] = {
    "hypotheses": ("hypothesis", "passed", "detail", "witness_t", "witness_value"),
    "rate": ("key", "value"),
    "curves": ("t", "v_star", "v_per_minus", "v_hat_per_plus", "rho_per_sq", "theta", "theta_prime"),
    "rho0": ("s", "t1", "t2", "t3", "t4"),
    "profile": ("x", "p_sum", "p_fourier", "abs_diff"),
    "profile_coefficients": ("q", "re", "im", "abs"),
    "theory": (
        "t", "regime", "p_plus_metastable", "p_plus_laplace", "transient_bound",
        "theta", "profile_argument",
    ),
    "theory_integral": ("t", "p_plus_integral", "log_p_plus_integral"),
    "theory_fixed_t": ("eta", "sigma", "prefactor", "p_plus_metastable", "profile_argument"),
    "cycling": ("sigma", "eta", "t", "prefactor"),
    "volterra": (
        "t", "psi", "c", "c0", "bracket_lo", "bracket_hi", "first_kind_residual",
        "deviation_bound", "oracle",
    ),
    "fixed_point": ("t", "c", "c0", "bracket_lo", "bracket_hi", "epsilon"),
    "histogram": ("t_lo", "t_hi", "count", "density", "ci_lo", "ci_hi", "censored_total"),
    "validate": ("name", "passed", "measured", "tolerance", "runtime_s", "detail"),
}


@dataclass(frozen=True)
class Provenance:
    scenario_hash: str
    seed: int
    version: str = __version__

    def line(self, kind: str) -> str:
        return (
            f"{PROVENANCE_PREFIX} scenario={self.scenario_hash} seed={self.seed} "
            f"version={self.version} kind={kind}"
        )


def _format(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        x = float(value)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.12e}"
    if value is None:
        return ""
    return str(value)


# =============================================================================
# WRITERS
# =============================================================================

def write_rows(path: str | Path, kind: str, rows: Iterable[Sequence[Any]], provenance: Provenance) -> Path:
    """Write rows under the registered header of `kind`."""
    if kind not in SCHEMAS:
        raise KeyError(f"unknown CSV kind {kind!r}")
    columns = SCHEMAS[kind]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(provenance.line(kind) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"{kind}: row has {len(row)} fields, expected {len(columns)}")
            writer.writerow([_format(v) for v in row])
            count += 1
    logger.info("csv_written", path=str(path), kind=kind, rows=count)
    return path


def write_columns(path: str | Path, kind: str, columns: Mapping[str, Any], provenance: Provenance) -> Path:
    """Write equal-length column arrays (scalars broadcast) keyed by header name."""
    names = SCHEMAS[kind]
    missing = [c for c in names if c not in columns]
    if missing:
        raise KeyError(f"{kind}: missing columns {missing}")
    arrays = [np.atleast_1d(np.asarray(columns[c], dtype=object)) for c in names]
    length = max(a.size for a in arrays)
    arrays = [np.broadcast_to(a, (length,)) if a.size == 1 else a for a in arrays]
    if any(a.size != length for a in arrays):
        raise ValueError(f"{kind}: columns differ in length")
    return write_rows(path, kind, zip(*arrays), provenance)


# =============================================================================
# SCHEMA CHECK
# =============================================================================

@dataclass
class SchemaReport:
    path: Path
    kind: Optional[str]
    rows: int = 0
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def schema_check(path: str | Path) -> SchemaReport:
    """Check the provenance line, the registered header and every row of a CSV."""
    path = Path(path)
    report = SchemaReport(path, None)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        report.problems.append(f"unreadable: {exc}")
        return report
    if not lines:
        report.problems.append("empty file")
        return report

    match = _PROVENANCE_RE.match(lines[0])
    if not match:
        report.problems.append("first line is not a provenance comment")
        return report
    kind = match.group("kind")
    report.kind = kind
    if kind not in SCHEMAS:
        report.problems.append(f"unregistered kind {kind!r}")
        return report

    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header is None or tuple(header) != SCHEMAS[kind]:
        report.problems.append(f"header {header} does not match schema {list(SCHEMAS[kind])}")
        return report
    for number, row in enumerate(reader, start=3):
        if len(row) != len(header):
            report.problems.append(f"line {number}: {len(row)} fields, expected {len(header)}")
            continue
        for name, text in zip(header, row):
            if name not in _TEXT_COLUMNS and not _is_number(text):
                report.problems.append(f"line {number}: column {name} is not numeric: {text!r}")
        report.rows += 1
    if report.problems:
        logger.warning("schema_check_failed", path=str(path), problems=len(report.problems))
    return report


def read_provenance(path: str | Path) -> dict[str, str]:
    """Fields of the provenance line of an emitted file."""
    with Path(path).open(encoding="utf-8") as fh:
        match = _PROVENANCE_RE.match(fh.readline().rstrip("\n"))
    if not match:
        raise ValueError(f"{path}: no provenance line")
    return match.groupdict()
