"""
Tests for CyclingLab Configuration Loader
"""

import pytest
from pathlib import Path
import sys

# Add src to path for direct imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.config import (
    THREADS_ENV_VAR,
    ConfigLoader,
    Scenario,
    Settings,
    get_config,
    get_settings,
    load_scenario,
    reload_settings,
    resolve_threads,
)
from src.errors import ScenarioError


CONFIG_DIR = Path(__file__).parent.parent / "config"


def write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "scenario.yml"
    path.write_text(text)
    return path


MINIMAL = """\
model:
  T: 1.0
  a: {mean: 1.0}
  g: {mean: 2.5, cos: [0.5]}
levels: {delta1: 0.1, delta2: 0.3}
noise: {sigma: 0.2}
"""


class TestConfigLoader:
    """Tests for ConfigLoader class."""

    @pytest.fixture
    def loader(self):
        return ConfigLoader(config_dir=CONFIG_DIR)

    def test_load_settings(self, loader):
        loader.load()
        settings = loader.settings
        assert isinstance(settings, Settings)
        assert settings.theory.beta == 0.25
        assert settings.simulation.bins_per_period == 8
        assert settings.validate_.tolerances["profile_dual"] == 1e-8

    def test_settings_load_lazily(self, loader):
        assert loader.settings.numerics is not None

    def test_missing_directory_uses_defaults(self, tmp_path):
        loader = ConfigLoader(config_dir=tmp_path)
        assert loader.settings == Settings()

    def test_invalid_settings_name_the_key(self, tmp_path):
        (tmp_path / "settings.yml").write_text("theory:\n  beta: -1\n")
        with pytest.raises(ScenarioError) as exc:
            ConfigLoader(config_dir=tmp_path).load()
        assert exc.value.key == "theory.beta"
        assert exc.value.line == 2

    def test_scenario_path(self, loader):
        assert loader.scenario_path("reference") == CONFIG_DIR / "scenarios" / "reference.yml"


class TestScenario:
    """Tests for scenario files."""

    @pytest.mark.parametrize("name", ["reference", "constant", "periodic"])
    def test_bundled_scenarios_load(self, name):
        scenario = load_scenario(CONFIG_DIR / "scenarios" / f"{name}.yml")
        assert isinstance(scenario, Scenario)
        spec = scenario.to_model_spec()
        assert spec.period == scenario.model.T

    def test_defaults(self, tmp_path):
        scenario = load_scenario(write(tmp_path, MINIMAL))
        assert scenario.sim.n_paths == 10_000
        assert scenario.sim.bridge_correction
        assert scenario.volterra.problem == "constant-boundary"
        assert scenario.outputs.dir == "out"

    def test_missing_key(self, tmp_path):
        text = MINIMAL.replace("noise: {sigma: 0.2}\n", "")
        with pytest.raises(ScenarioError) as exc:
            load_scenario(write(tmp_path, text))
        assert exc.value.key == "noise"
        assert "Missing required key" in str(exc.value)

    def test_invalid_value_reports_line(self, tmp_path):
        text = MINIMAL.replace("sigma: 0.2", "sigma: -0.2")
        with pytest.raises(ScenarioError) as exc:
            load_scenario(write(tmp_path, text))
        assert exc.value.key == "noise.sigma"
        assert exc.value.line == 6

    def test_unordered_levels(self, tmp_path):
        text = MINIMAL.replace("delta1: 0.1, delta2: 0.3", "delta1: 0.3, delta2: 0.1")
        with pytest.raises(ScenarioError):
            load_scenario(write(tmp_path, text))

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ScenarioError) as exc:
            load_scenario(write(tmp_path, MINIMAL + "extra: 1\n"))
        assert exc.value.key == "extra"

    def test_bad_yaml(self, tmp_path):
        with pytest.raises(ScenarioError) as exc:
            load_scenario(write(tmp_path, "model: [unclosed\n"))
        assert "Invalid YAML" in str(exc.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError):
            load_scenario(tmp_path / "absent.yml")

    def test_top_level_must_be_mapping(self, tmp_path):
        with pytest.raises(ScenarioError):
            load_scenario(write(tmp_path, "- 1\n- 2\n"))

    def test_overrides(self, tmp_path):
        scenario = load_scenario(write(tmp_path, MINIMAL))
        other = scenario.with_overrides(sigma=0.05, seed=9, out="elsewhere")
        assert other.noise.sigma == 0.05
        assert other.sim.seed == 9
        assert other.outputs.dir == "elsewhere"
        assert scenario.noise.sigma == 0.2
        assert scenario.with_overrides() is scenario

    def test_sigma_override_must_be_positive(self, tmp_path):
        scenario = load_scenario(write(tmp_path, MINIMAL))
        with pytest.raises(ScenarioError):
            scenario.with_overrides(sigma=0.0)

    def test_hash_tracks_content(self, tmp_path):
        scenario = load_scenario(write(tmp_path, MINIMAL))
        assert scenario.scenario_hash == load_scenario(write(tmp_path, MINIMAL)).scenario_hash
        assert scenario.scenario_hash != scenario.with_overrides(sigma=0.3).scenario_hash
        assert len(scenario.scenario_hash) == 12

    def test_sim_config(self, tmp_path):
        scenario = load_scenario(write(tmp_path, MINIMAL))
        cfg = scenario.to_sim_config(Settings(), workers=3)
        assert cfg.workers == 3
        assert cfg.seed == scenario.sim.seed
        assert cfg.batch_size == Settings().simulation.batch_size


class TestThreads:
    """Tests for the worker count resolution."""

    def test_flag_wins(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV_VAR, "6")
        assert resolve_threads(2) == 2

    def test_environment(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV_VAR, "6")
        assert resolve_threads() == 6

    def test_bad_environment(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV_VAR, "many")
        with pytest.raises(ScenarioError):
            resolve_threads()

    def test_settings_fallback(self, monkeypatch):
        monkeypatch.delenv(THREADS_ENV_VAR, raising=False)
        assert resolve_threads() == get_settings().simulation.workers


class TestSingleton:
    """Tests for the global configuration instance."""

    def test_get_config_is_cached(self):
        assert get_config() is get_config()

    def test_reload(self):
        settings = reload_settings(CONFIG_DIR)
        assert settings is get_settings()
