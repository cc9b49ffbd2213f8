"""
CyclingLab Validate Command

Runs the acceptance criteria, writes validate.csv and schema-checks every
CSV in the output directory.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

from cli.commands import CommandContext
from cli.tui.console import print_criteria, print_error, print_info, print_success
from cli.tui.spinners import spinner
from src.emit import schema_check, write_rows
from src.errors import ScenarioError
from src.validation import CRITERIA, CriterionResult, run_validation, selected_criteria


def parse_tolerances(items: Iterable[str]) -> dict[str, float]:
    """NAME=VALUE pairs; NAME is a criterion name or a tolerance key of the settings."""
    out: dict[str, float] = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise ScenarioError(f"tolerance must be NAME=VALUE, got {item!r}", key="tolerance")
        try:
            out[name.strip()] = float(value)
        except ValueError as exc:
            raise ScenarioError(f"tolerance {name!r} is not a number: {value!r}", key="tolerance") from exc
    return out


def run_validate(ctx: CommandContext, skip: Iterable[str] = (), tolerance: Iterable[str] = ()) -> bool:
    """Return True when every selected criterion and every schema check passed."""
    skip = [name for item in skip for name in item.split(",") if name]
    try:
        names = selected_criteria(skip)
    except KeyError as exc:
        raise ScenarioError(f"{exc.args[0]}; known: {', '.join(CRITERIA)}, mc", key="skip") from exc
    overrides = parse_tolerances(tolerance)
    unknown = set(overrides) - set(ctx.settings.validate_.tolerances)
    if unknown:
        raise ScenarioError(f"unknown tolerance names: {sorted(unknown)}", key="tolerance")

    print_info(f"running {len(names)} criteria: {', '.join(names)}")
    with spinner("Validating...") as s:
        def progress(result: CriterionResult) -> None:
            s.update(f"{result.name}: {'pass' if result.passed else 'FAIL'}")

        results = run_validation(ctx.scenario, skip=skip, tolerances=overrides,
                                 workers=ctx.threads, settings=ctx.settings, on_result=progress)
    print_criteria(results)
    write_rows(ctx.path("validate.csv"), "validate", [r.row() for r in results], ctx.provenance)

    schemas_ok = True
    for path in sorted(Path(ctx.out_dir).glob("*.csv")):
        report = schema_check(path)
        if not report.ok:
            schemas_ok = False
            print_error(f"{path.name}: {'; '.join(report.problems)}")
    if schemas_ok:
        print_success("every CSV in the output directory passed the schema check")
    return schemas_ok and all(r.passed for r in results)
