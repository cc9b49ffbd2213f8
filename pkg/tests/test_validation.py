"""
Tests for CyclingLab Validation Suite
"""

import math
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.config import load_scenario
from src.validation import (
    CRITERIA,
    MC_CRITERIA,
    CriterionResult,
    run_validation,
    selected_criteria,
)

SCENARIOS = Path(__file__).parent.parent / "config" / "scenarios"
ANALYTIC_ONLY = ["mc", "variance_engine", "volterra_oracle"]


@pytest.fixture
def scenario():
    return load_scenario(SCENARIOS / "reference.yml")


class TestSelection:
    """Tests for criterion selection."""

    def test_all_by_default(self):
        assert selected_criteria() == list(CRITERIA)
        assert len(CRITERIA) == 9

    def test_mc_skips_monte_carlo_criteria(self):
        names = selected_criteria(["mc"])
        assert not MC_CRITERIA & set(names)
        assert "profile_dual" in names

    def test_skip_single(self):
        assert "sum_periodicity" not in selected_criteria(["sum_periodicity"])

    def test_unknown_name(self):
        with pytest.raises(KeyError):
            selected_criteria(["nonsense"])

    def test_result_row(self):
        r = CriterionResult("x", True, 1e-9, 1e-8, 0.25, "ok")
        assert r.row() == ("x", True, 1e-9, 1e-8, 0.25, "ok")


class TestRun:
    """Tests for the runner."""

    def test_analytic_criteria_pass(self, scenario):
        results = run_validation(scenario, skip=ANALYTIC_ONLY)
        assert [r.name for r in results] == ["profile_dual", "normalization", "metastable_cycling", "sum_periodicity"]
        for r in results:
            assert r.passed, f"{r.name}: {r.measured} vs {r.tolerance} ({r.detail})"
            assert r.runtime_s >= 0

    def test_tolerance_override_can_fail(self, scenario):
        results = run_validation(scenario, skip=list(CRITERIA.keys() - {"profile_dual"}),
                                 tolerances={"profile_dual": -1.0})
        assert len(results) == 1
        assert not results[0].passed
        assert results[0].tolerance == -1.0

    def test_callback_sees_every_result(self, scenario):
        seen = []
        results = run_validation(scenario, skip=ANALYTIC_ONLY, on_result=seen.append)
        assert seen == results

    def test_metastable_cycling_holds_at_laplace_scale(self, scenario):
        results = run_validation(scenario, skip=list(CRITERIA.keys() - {"metastable_cycling"}))
        (result,) = results
        assert result.passed, result.detail
        assert result.tolerance == 1e-4
        assert "periods 40 and 42" in result.detail

    def test_error_fails_only_that_criterion(self, scenario, monkeypatch):
        def boom(ctx):
            raise RuntimeError("kaput")

        monkeypatch.setitem(CRITERIA, "profile_dual", boom)
        results = run_validation(scenario, skip=ANALYTIC_ONLY)
        first, rest = results[0], results[1:]
        assert first.name == "profile_dual"
        assert not first.passed
        assert math.isnan(first.measured)
        assert first.detail == "RuntimeError: kaput"
        assert all(r.passed for r in rest)
