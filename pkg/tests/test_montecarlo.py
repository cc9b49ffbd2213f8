"""
Tests for CyclingLab Monte Carlo
"""

import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.coefficients import ModelSpec, PeriodicFunction
from src.montecarlo import (
    PathOutcome,
    SimConfig,
    build_tables,
    cumulative_passage,
    estimate_density,
    estimate_histogram,
    histogram,
    ks_distance,
    ks_margin,
    path_stream,
    simulate,
    simulate_branch_plus,
    simulate_path,
    step_exact,
    suggest_t_max_periods,
)
from src.theory import crossing_cdf_plus
from src.variances import find_rate_minimum


def make_spec(sigma=0.6):
    return ModelSpec(
        a=PeriodicFunction(1.0, 1.0),
        g=PeriodicFunction(1.0, 2.5, cos=(0.5,)),
        delta1=0.1, delta2=0.3, sigma=sigma,
    )


@pytest.fixture
def noisy_spec():
    """Large noise so most paths exit within a few periods."""
    return make_spec()


@pytest.fixture
def small_config():
    return SimConfig(substeps_per_period=32, n_paths=600, t_max_periods=6, seed=7, batch_size=256)


class TestSimConfig:
    """Tests for run parameters."""

    def test_defaults(self):
        cfg = SimConfig()
        assert cfg.bridge_correction
        assert not cfg.bridge_switching
        assert cfg.t_max_periods is None

    @pytest.mark.parametrize("field,value", [
        ("n_paths", 0),
        ("substeps_per_period", 0),
        ("batch_size", 0),
        ("t_max_periods", 0),
        ("seed", -1),
    ])
    def test_invalid_values(self, field, value):
        with pytest.raises(ValueError):
            SimConfig(**{field: value})

    def test_substep(self, noisy_spec):
        assert SimConfig(substeps_per_period=64).substep(noisy_spec) == pytest.approx(1 / 64)

    def test_outcome_order(self):
        with pytest.raises(ValueError):
            PathOutcome(tau_plus=1.0, n_switches=1, first_up_time=2.0)
        assert PathOutcome(None, 0, None).censored


class TestStepping:
    """Tests for the exact transition laws."""

    def test_deterministic_flow(self, noisy_spec):
        h = 0.1
        minus = step_exact(noisy_spec, "minus", [0.0], 0.0, h, sigma=0.0)
        plus = step_exact(noisy_spec, "plus", [0.5], 0.0, h, sigma=0.0)
        assert minus[0] == pytest.approx(-1.0 + math.exp(-h))
        assert plus[0] == pytest.approx(1.0 - 0.5 * math.exp(h))

    def test_supplied_normals(self, noisy_spec):
        a = step_exact(noisy_spec, "minus", [0.0, 0.0], 0.0, 0.1, normal=[1.0, -1.0])
        assert a[0] + a[1] == pytest.approx(2.0 * (-1.0 + math.exp(-0.1)))
        assert a[0] > a[1]

    def test_argument_checks(self, noisy_spec):
        with pytest.raises(ValueError):
            step_exact(noisy_spec, "minus", [0.0], 0.0, 0.0)
        with pytest.raises(ValueError):
            step_exact(noisy_spec, "sideways", [0.0], 0.0, 0.1)

    def test_tables(self, noisy_spec):
        tab = build_tables(noisy_spec, 16)
        assert tab.substeps == 16
        np.testing.assert_allclose(tab.decay_minus * tab.growth_plus, 1.0)
        assert np.all(tab.var_minus > 0)
        assert np.all(tab.var_plus > tab.var_minus)

    def test_path_streams_are_independent(self):
        a = path_stream(3, 0, 0).standard_normal(4)
        b = path_stream(3, 1, 0).standard_normal(4)
        other_slot = path_stream(3, 0, 1).standard_normal(4)
        again = path_stream(3, 0, 0).standard_normal(4)
        np.testing.assert_array_equal(a, again)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, other_slot)

    def test_path_stream_does_not_depend_on_block_length(self):
        whole = path_stream(5, 2, 0).standard_normal(300)
        g = path_stream(5, 2, 0)
        pieces = np.concatenate([g.standard_normal(256), g.standard_normal(44)])
        np.testing.assert_array_equal(whole, pieces)


class TestRuns:
    """Tests for full runs."""

    def test_same_seed_same_result(self, noisy_spec, small_config):
        a = simulate(noisy_spec, small_config)
        b = simulate(noisy_spec, small_config)
        np.testing.assert_array_equal(a.tau_plus, b.tau_plus)
        np.testing.assert_array_equal(a.n_switches, b.n_switches)

    def test_other_seed_differs(self, noisy_spec, small_config):
        a = simulate(noisy_spec, small_config)
        b = simulate(noisy_spec, replace(small_config, seed=8))
        assert not np.array_equal(a.tau_plus, b.tau_plus, equal_nan=True)

    def test_worker_count_does_not_change_results(self, noisy_spec, small_config):
        serial = simulate(noisy_spec, small_config)
        pooled = simulate(noisy_spec, replace(small_config, workers=2))
        np.testing.assert_array_equal(serial.tau_plus, pooled.tau_plus)
        np.testing.assert_array_equal(serial.first_up_time, pooled.first_up_time)

    def test_single_path_replays_full_run(self, noisy_spec, small_config):
        run = simulate(noisy_spec, small_config)
        for path_id in (0, 5, 300, 599):
            assert simulate_path(noisy_spec, small_config, path_id) == run.outcome(path_id)

    def test_path_id_range(self, noisy_spec, small_config):
        with pytest.raises(ValueError):
            simulate_path(noisy_spec, small_config, 600)

    def test_batch_size_does_not_change_outcomes(self, noisy_spec, small_config):
        reference = simulate(noisy_spec, small_config)
        for batch_size in (64, 600):
            other = simulate(noisy_spec, replace(small_config, batch_size=batch_size))
            for path_id in (0, 5, 300):
                assert other.outcome(path_id) == reference.outcome(path_id)
            np.testing.assert_array_equal(other.tau_plus, reference.tau_plus)
            np.testing.assert_array_equal(other.n_switches, reference.n_switches)

    def test_bridge_correction_only_adds_exits(self, noisy_spec, small_config):
        bridged = simulate(noisy_spec, small_config)
        endpoint = simulate(noisy_spec, replace(small_config, bridge_correction=False))
        seen = ~np.isnan(endpoint.tau_plus)
        assert not np.any(np.isnan(bridged.tau_plus[seen]))
        assert np.all(bridged.tau_plus[seen] <= endpoint.tau_plus[seen])
        assert bridged.n_events >= endpoint.n_events

    def test_outcomes_are_consistent(self, noisy_spec, small_config):
        run = simulate(noisy_spec, small_config)
        assert run.n_paths == 600
        assert run.t_max == pytest.approx(6.0)
        exited = ~np.isnan(run.tau_plus)
        assert np.any(exited)
        # every exit happened after the first switch up
        assert np.all(run.first_up_time[exited] <= run.tau_plus[exited])
        assert np.all(run.n_switches[exited] % 2 == 1)
        assert np.all(run.tau_plus[exited] <= run.t_max + 1e-12)

    def test_progress_callback(self, noisy_spec, small_config):
        calls = []
        simulate(noisy_spec, small_config, progress=lambda done, total: calls.append((done, total)))
        assert calls == [(1, 3), (2, 3), (3, 3)]

    def test_minus_leg_records_first_rise(self, noisy_spec, small_config):
        run = simulate(noisy_spec, small_config, mode="minus_leg")
        assert run.mode == "minus_leg"
        assert np.all(np.isnan(run.tau_plus))
        assert run.n_events > 0

    def test_suggested_horizon_covers_relaxation(self, noisy_spec):
        rate = find_rate_minimum(noisy_spec)
        periods = suggest_t_max_periods(noisy_spec, rate)
        assert periods >= 4 + math.ceil(2 * abs(math.log(0.6)))


class TestEstimators:
    """Tests for histograms and distribution estimates."""

    def test_histogram_counts(self):
        hist = histogram([0.1, 0.2, np.nan, 0.9], 0.0, 1.0, 0.25)
        np.testing.assert_array_equal(hist.counts, [2, 0, 0, 1])
        assert hist.censored == 1
        np.testing.assert_allclose(hist.density, [2.0, 0.0, 0.0, 1.0])

    def test_partial_last_bin_keeps_late_events(self):
        # span of 8.4 widths: the ninth bin is cut at t_max
        hist = histogram([0.05, 0.83, 0.84], 0.0, 0.84, 0.1)
        assert hist.edges.size == 10
        assert hist.edges[-1] == 0.84
        assert hist.counts.sum() == 3
        assert hist.counts[-1] == 2
        assert hist.width[-1] == pytest.approx(0.04)

    def test_interval_brackets_density(self):
        hist = histogram(np.linspace(0.05, 0.95, 50), 0.0, 1.0, 0.1)
        lo, hi = hist.interval()
        assert np.all(lo <= hist.density)
        assert np.all(hist.density <= hi)

    def test_all_censored_gives_empty_density(self):
        spec = make_spec(0.05)
        run = simulate(spec, SimConfig(substeps_per_period=16, n_paths=200, t_max_periods=2))
        assert run.censored_fraction == 1.0
        assert estimate_density(run).is_empty

    def test_default_bin_width(self, noisy_spec, small_config):
        run = simulate(noisy_spec, small_config)
        hist = estimate_histogram(run)
        np.testing.assert_allclose(hist.width, 1.0 / 8)
        assert hist.counts.sum() + hist.censored == run.n_paths

    def test_cumulative_passage(self, noisy_spec, small_config):
        run = simulate(noisy_spec, small_config)
        cp = cumulative_passage(run, np.linspace(0.0, 6.0, 25))
        assert np.all(np.diff(cp.probability) >= 0)
        assert np.all(cp.lower <= cp.probability)
        assert np.all(cp.probability <= cp.upper)
        assert cp.probability[-1] == pytest.approx(1.0 - run.censored_fraction)

    def test_ks_margin(self):
        assert ks_margin(1000) == pytest.approx(3.0 * math.sqrt(math.log(200.0) / 2000.0))
        assert ks_margin(4000) == pytest.approx(0.5 * ks_margin(1000))


class TestExactness:
    """The plus branch with the bridge correction follows the reflection law."""

    def test_plus_branch_matches_reflection_law(self):
        spec = make_spec(0.3)
        cfg = SimConfig(substeps_per_period=64, n_paths=20_000, t_max_periods=3, seed=11)
        run = simulate_branch_plus(spec, cfg)
        distance = ks_distance(run, lambda t: crossing_cdf_plus(spec, t, 0.0))
        assert distance <= ks_margin(cfg.n_paths)

    @pytest.mark.slow
    def test_plus_branch_large_sample(self):
        spec = make_spec(0.3)
        cfg = SimConfig(substeps_per_period=64, n_paths=200_000, t_max_periods=4, seed=12)
        run = simulate_branch_plus(spec, cfg)
        distance = ks_distance(run, lambda t: crossing_cdf_plus(spec, t, 0.0))
        assert distance <= ks_margin(cfg.n_paths)
