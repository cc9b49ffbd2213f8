"""
Tests for CyclingLab CLI
"""

import sys
from pathlib import Path

import pytest
from typer.testing import CliRunner

sys.path.insert(0, str(Path(__file__).parent.parent))

from cli.app import app
from cli.commands.theory import parse_sweep
from cli.commands.validate import parse_tolerances
from src import __version__
from src.emit import read_provenance, schema_check
from src.errors import ScenarioError

SCENARIOS = Path(__file__).parent.parent / "config" / "scenarios"

SMALL = """\
name: small
model:
  T: 1.0
  a: {mean: 1.0}
  g: {mean: 2.5, cos: [0.5]}
levels: {delta1: 0.1, delta2: 0.3}
noise: {sigma: 0.5}
sim: {substeps_per_period: 32, n_paths: 500, t_max_periods: 4, seed: 3}
theory: {periods: 6, points_per_period: 16, integral: false}
volterra: {problem: constant-boundary, t_max: 2.0, n: 200}
profile: {points: 50}
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.yml"
    path.write_text(SMALL)
    return path


def invoke(runner, small, out, *args):
    return runner.invoke(app, ["--config", str(small), "--out", str(out), *args])


class TestBasics:
    """Tests for global behavior."""

    def test_version(self, runner):
        result = runner.invoke(app, ["--version"])
        assert result.exit_code == 0
        assert __version__ in result.output

    def test_help_lists_commands(self, runner):
        result = runner.invoke(app, ["--help"])
        assert result.exit_code == 0
        for name in ("analyze", "profile", "theory", "volterra", "simulate", "validate"):
            assert name in result.output

    def test_unknown_command(self, runner):
        assert runner.invoke(app, ["frobnicate"]).exit_code != 0

    def test_missing_config_file(self, runner, tmp_path):
        result = runner.invoke(app, ["--config", str(tmp_path / "absent.yml"), "profile"])
        assert result.exit_code != 0


class TestExitCodes:
    """Errors map to documented exit codes."""

    def test_invalid_scenario_exits_2(self, runner, tmp_path):
        bad = tmp_path / "bad.yml"
        bad.write_text(SMALL.replace("sigma: 0.5", "sigma: -1"))
        assert invoke(runner, bad, tmp_path / "out", "profile").exit_code == 2

    def test_zero_sigma_flag_exits_2(self, runner, small, tmp_path):
        result = runner.invoke(app, ["--config", str(small), "--out", str(tmp_path), "--sigma", "0", "profile"])
        assert result.exit_code == 2

    def test_degenerate_minimum_exits_3(self, runner, tmp_path):
        result = invoke(runner, SCENARIOS / "constant.yml", tmp_path, "theory")
        assert result.exit_code == 3

    def test_unknown_problem_exits_2(self, runner, small, tmp_path):
        assert invoke(runner, small, tmp_path, "volterra", "--problem", "nope").exit_code == 2

    def test_bad_sweep_exits_2(self, runner, small, tmp_path):
        assert invoke(runner, small, tmp_path, "theory", "--sigma-sweep", "1:0:2").exit_code == 2


class TestCommands:
    """Each command writes schema-valid CSVs with provenance."""

    def check(self, path: Path, kind: str):
        assert path.exists(), path
        report = schema_check(path)
        assert report.ok, report.problems
        assert report.kind == kind
        assert report.rows > 0

    def test_profile(self, runner, small, tmp_path):
        result = invoke(runner, small, tmp_path, "profile")
        assert result.exit_code == 0, result.output
        self.check(tmp_path / "profile.csv", "profile")
        self.check(tmp_path / "profile_coefficients.csv", "profile_coefficients")

    def test_analyze(self, runner, small, tmp_path):
        result = invoke(runner, small, tmp_path, "analyze")
        assert result.exit_code == 0, result.output
        for name in ("hypotheses", "rate", "curves", "rho0"):
            self.check(tmp_path / f"{name}.csv", name)

    def test_analyze_reports_failed_hypotheses(self, runner, tmp_path):
        result = invoke(runner, SCENARIOS / "constant.yml", tmp_path, "analyze")
        assert result.exit_code == 0, result.output
        self.check(tmp_path / "hypotheses.csv", "hypotheses")

    def test_theory_with_sweep(self, runner, small, tmp_path):
        result = invoke(runner, small, tmp_path, "theory", "--sigma-sweep", "2:1:3", "--fixed-t", "4.5")
        assert result.exit_code == 0, result.output
        self.check(tmp_path / "theory.csv", "theory")
        self.check(tmp_path / "theory_fixed_t.csv", "theory_fixed_t")
        self.check(tmp_path / "theory_sweep_000.csv", "theory")
        self.check(tmp_path / "theory_sweep_001.csv", "theory")
        self.check(tmp_path / "cycling.csv", "cycling")
        assert not (tmp_path / "theory_integral.csv").exists()

    def test_volterra(self, runner, small, tmp_path):
        result = invoke(runner, small, tmp_path, "volterra")
        assert result.exit_code == 0, result.output
        self.check(tmp_path / "volterra.csv", "volterra")
        self.check(tmp_path / "fixed_point.csv", "fixed_point")

    def test_simulate(self, runner, small, tmp_path):
        result = invoke(runner, small, tmp_path, "simulate")
        assert result.exit_code == 0, result.output
        self.check(tmp_path / "histogram.csv", "histogram")
        self.check(tmp_path / "psi_minus.csv", "histogram")

    def test_seed_flag_reaches_provenance(self, runner, small, tmp_path):
        result = runner.invoke(app, ["--config", str(small), "--out", str(tmp_path), "--seed", "99", "profile"])
        assert result.exit_code == 0, result.output
        assert read_provenance(tmp_path / "profile.csv")["seed"] == "99"

    def test_identical_runs_identical_files(self, runner, small, tmp_path):
        invoke(runner, small, tmp_path / "a", "simulate")
        invoke(runner, small, tmp_path / "b", "simulate")
        assert (tmp_path / "a" / "histogram.csv").read_bytes() == (tmp_path / "b" / "histogram.csv").read_bytes()


class TestValidate:
    """Tests for the validate command."""

    SKIP = "mc,variance_engine,volterra_oracle"

    def test_passing_run(self, runner, small, tmp_path):
        result = invoke(runner, small, tmp_path, "validate", "--skip", self.SKIP)
        assert result.exit_code == 0, result.output
        self.check_validate(tmp_path)

    def test_tolerance_override_fails(self, runner, small, tmp_path):
        result = invoke(runner, small, tmp_path, "validate", "--skip", self.SKIP, "-t", "profile_dual=-1")
        assert result.exit_code == 1
        self.check_validate(tmp_path)

    def test_unknown_skip_exits_2(self, runner, small, tmp_path):
        assert invoke(runner, small, tmp_path, "validate", "--skip", "bogus").exit_code == 2

    def test_broken_csv_fails_schema_check(self, runner, small, tmp_path):
        (tmp_path / "stray.csv").write_text("not,a,lab,file\n")
        result = invoke(runner, small, tmp_path, "validate", "--skip", self.SKIP)
        assert result.exit_code == 1

    def check_validate(self, out: Path):
        report = schema_check(out / "validate.csv")
        assert report.ok
        assert report.rows == 4


class TestParsers:
    """Tests for flag parsers."""

    def test_parse_sweep(self):
        assert list(parse_sweep("1:0.5:2")) == [1.0, 1.5, 2.0]
        assert list(parse_sweep("0.5:0.2:1.0")) == pytest.approx([0.5, 0.7, 0.9])

    @pytest.mark.parametrize("text", ["1:2", "a:b:c", "2:1:1", "1:-1:2", "0:1:2"])
    def test_parse_sweep_rejects(self, text):
        with pytest.raises(ScenarioError):
            parse_sweep(text)

    def test_parse_tolerances(self):
        assert parse_tolerances(["a=1e-3", "b = 2"]) == {"a": 1e-3, "b": 2.0}
        with pytest.raises(ScenarioError):
            parse_tolerances(["a"])
        with pytest.raises(ScenarioError):
            parse_tolerances(["a=x"])
