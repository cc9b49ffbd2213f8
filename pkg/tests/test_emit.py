"""
Tests for CyclingLab CSV Emission
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src import __version__
from src.emit import (
    SCHEMAS,
    Provenance,
    read_provenance,
    schema_check,
    write_columns,
    write_rows,
)


@pytest.fixture
def provenance():
    return Provenance("abc123", 42)


class TestProvenance:
    """Tests for the provenance line."""

    def test_line(self, provenance):
        assert provenance.line("rate") == (
            f"# provenance: scenario=abc123 seed=42 version={__version__} kind=rate"
        )

    def test_round_trip_through_file(self, tmp_path, provenance):
        path = write_rows(tmp_path / "rate.csv", "rate", [("R", 1.5)], provenance)
        fields = read_provenance(path)
        assert fields == {"scenario": "abc123", "seed": "42", "version": __version__, "kind": "rate"}

    def test_missing_provenance(self, tmp_path):
        path = tmp_path / "plain.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_provenance(path)


class TestWriters:
    """Tests for the row and column writers."""

    def test_number_format(self, tmp_path, provenance):
        path = write_columns(tmp_path / "profile.csv", "profile", {
            "x": [0.0, 0.5],
            "p_sum": [1.0, float("nan")],
            "p_fourier": [float("inf"), 2.0],
            "abs_diff": 0.0,
        }, provenance)
        lines = path.read_text().splitlines()
        assert lines[1] == "x,p_sum,p_fourier,abs_diff"
        assert lines[2] == "0.000000000000e+00,1.000000000000e+00,inf,0.000000000000e+00"
        assert lines[3] == "5.000000000000e-01,nan,2.000000000000e+00,0.000000000000e+00"

    def test_scalars_broadcast(self, tmp_path, provenance):
        path = write_columns(tmp_path / "c.csv", "cycling", {
            "sigma": 0.1, "eta": 2.3, "t": np.arange(3.0), "prefactor": [1.0, 2.0, 3.0],
        }, provenance)
        assert schema_check(path).rows == 3

    def test_identical_inputs_identical_bytes(self, tmp_path, provenance):
        cols = {"q": np.arange(4), "re": np.linspace(0, 1, 4), "im": np.zeros(4), "abs": np.ones(4) / 3}
        a = write_columns(tmp_path / "a.csv", "profile_coefficients", cols, provenance)
        b = write_columns(tmp_path / "b.csv", "profile_coefficients", cols, provenance)
        assert a.read_bytes() == b.read_bytes()

    def test_booleans_and_integers(self, tmp_path, provenance):
        path = write_rows(tmp_path / "v.csv", "validate", [("normalization", True, 1e-9, 1e-8, 0.5, "")], provenance)
        assert path.read_text().splitlines()[2].startswith("normalization,true,")
        path = write_columns(tmp_path / "h.csv", "histogram", {
            "t_lo": [0.0], "t_hi": [0.125], "count": np.array([7]), "density": [5.6],
            "ci_lo": [4.0], "ci_hi": [7.0], "censored_total": 3,
        }, provenance)
        assert path.read_text().splitlines()[2].split(",")[2] == "7"

    def test_unknown_kind(self, tmp_path, provenance):
        with pytest.raises(KeyError):
            write_rows(tmp_path / "x.csv", "nope", [], provenance)

    def test_missing_column(self, tmp_path, provenance):
        with pytest.raises(KeyError):
            write_columns(tmp_path / "x.csv", "rate", {"key": ["a"]}, provenance)

    def test_wrong_row_width(self, tmp_path, provenance):
        with pytest.raises(ValueError):
            write_rows(tmp_path / "x.csv", "rate", [("a", 1.0, 2.0)], provenance)

    def test_ragged_columns(self, tmp_path, provenance):
        with pytest.raises(ValueError):
            write_columns(tmp_path / "x.csv", "rate", {"key": ["a", "b"], "value": [1.0, 2.0, 3.0]}, provenance)

    def test_creates_parent_directories(self, tmp_path, provenance):
        path = write_rows(tmp_path / "deep" / "er" / "rate.csv", "rate", [], provenance)
        assert path.exists()


class TestSchemaCheck:
    """Tests for the schema checker."""

    def test_every_kind_has_unique_columns(self):
        for kind, columns in SCHEMAS.items():
            assert len(set(columns)) == len(columns), kind

    def test_valid_file(self, tmp_path, provenance):
        path = write_rows(tmp_path / "rate.csv", "rate", [("R", 1.5), ("s_star", 0.25)], provenance)
        report = schema_check(path)
        assert report.ok
        assert report.kind == "rate"
        assert report.rows == 2

    def test_missing_provenance(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("key,value\nR,1\n")
        report = schema_check(path)
        assert not report.ok
        assert "provenance" in report.problems[0]

    def test_wrong_header(self, tmp_path, provenance):
        path = tmp_path / "x.csv"
        path.write_text(provenance.line("rate") + "\nname,value\nR,1\n")
        assert "header" in schema_check(path).problems[0]

    def test_unregistered_kind(self, tmp_path, provenance):
        path = tmp_path / "x.csv"
        path.write_text(provenance.line("mystery") + "\na\n")
        assert "unregistered" in schema_check(path).problems[0]

    def test_non_numeric_value(self, tmp_path, provenance):
        path = tmp_path / "x.csv"
        path.write_text(provenance.line("cycling") + "\nsigma,eta,t,prefactor\n0.1,2.3,oops,1\n")
        report = schema_check(path)
        assert report.problems == ["line 3: column t is not numeric: 'oops'"]

    def test_short_row(self, tmp_path, provenance):
        path = tmp_path / "x.csv"
        path.write_text(provenance.line("rate") + "\nkey,value\nR\n")
        assert "fields" in schema_check(path).problems[0]

    def test_empty_and_missing_files(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        assert schema_check(empty).problems == ["empty file"]
        assert "unreadable" in schema_check(tmp_path / "absent.csv").problems[0]
