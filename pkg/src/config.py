"""
CyclingLab Configuration Loader

Loads and validates configuration from YAML files.
Lab-wide settings live in config/settings.yml; every run is driven by a
scenario file (see config/scenarios/) holding the model, levels, noise
intensity, simulation parameters and per-command options.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Literal, NoReturn, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ScenarioError

THREADS_ENV_VAR = "CYCLINGLAB_THREADS"


# =============================================================================
# SETTINGS MODELS
# =============================================================================

class LoggingSettings(BaseModel):
    """Logging output options."""
    level: str = "WARNING"
    json_output: bool = False
    file_enabled: bool = False
    log_dir: str = "logs"


class NumericsSettings(BaseModel):
    """Grids and tolerances shared by the analytic modules."""
    grid_points: int = Field(default=4096, ge=64)
    quad_rtol: float = Field(default=1e-12, gt=0)
    quad_min_panels: int = Field(default=4, ge=1)
    quad_max_panels: int = Field(default=2 ** 14, ge=1)
    golden_tol: float = Field(default=1e-10, gt=0)
    fd_step: float = Field(default=1e-4, gt=0)
    tie_tol: float = Field(default=1e-9, ge=0)
    quadratic_tol: float = Field(default=1e-8, gt=0)


class TheorySettings(BaseModel):
    """
    Constants the asymptotic statements leave unspecified.

    Every "const" of the error brackets is set explicitly so bounds are
    computable; transient_const=None selects the automatic constant
    (see theory.p_plus_transient_bound).
    """
    beta: float = Field(default=0.25, gt=0)
    bracket_const: float = Field(default=1.0, gt=0)
    kernel_const: float = Field(default=1.0, gt=0)
    asymptotic_const: float = Field(default=1.0, gt=0)
    sandwich_const: float = Field(default=1.0, gt=0)
    transient_const: Optional[float] = None
    renewal_rtol: float = Field(default=1e-12, gt=0)
    renewal_quad_rtol: float = Field(default=1e-8, gt=0)
    renewal_gl_order: int = Field(default=8, ge=2)
    renewal_min_panels: int = Field(default=4, ge=1)
    renewal_max_panels: int = Field(default=128, ge=1)
    renewal_sup_points: int = Field(default=17, ge=3)
    renewal_starts: int = Field(default=33, ge=3)
    renewal_degree: int = Field(default=48, ge=4)
    renewal_step: float = Field(default=1.0 / 128.0, gt=0)


class SimulationSettings(BaseModel):
    """Monte Carlo engine defaults."""
    batch_size: int = Field(default=4096, ge=1)
    bins_per_period: int = Field(default=8, ge=1)
    bridge_switching: bool = False
    max_lambda_h: float = Field(default=0.05, gt=0)
    min_uncensored_fraction: float = Field(default=0.1, ge=0, le=1)
    workers: int = Field(default=1, ge=1)


class ValidateSettings(BaseModel):
    """Acceptance suite tolerances and sizes."""
    tolerances: dict[str, float] = Field(default_factory=lambda: {
        "profile_dual": 1e-8,
        "normalization": 1e-8,
        "period_mass": 1e-6,
        "variance_ode": 1e-8,
        "variance_relation": 1e-10,
        "volterra_oracle": 1e-3,
        "volterra_residual": 1e-3,
        "simulator_exactness": 3.0,
        "metastable_cycling": 1e-4,
        "theory_vs_mc": 0.9,
        "theory_vs_mc_mass": 2.0,
        "transient_bound": 0.0,
        "sum_periodicity": 1e-6,
    })
    exactness_paths: int = Field(default=100_000, ge=1)
    exactness_sigma: float = Field(default=0.3, gt=0)
    shape_paths: int = Field(default=1_000_000, ge=1)
    shape_sigma: float = Field(default=0.35, gt=0)
    shape_min_events: int = Field(default=200, ge=1)


class Settings(BaseModel):
    """General CyclingLab settings."""
    version: str = "1.0"
    logging: LoggingSettings = Field(default_factory=LoggingSettings)
    numerics: NumericsSettings = Field(default_factory=NumericsSettings)
    theory: TheorySettings = Field(default_factory=TheorySettings)
    simulation: SimulationSettings = Field(default_factory=SimulationSettings)
    validate_: ValidateSettings = Field(default_factory=ValidateSettings, alias="validate")

    model_config = ConfigDict(populate_by_name=True)


# =============================================================================
# SCENARIO MODELS
# =============================================================================

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class HarmonicSeries(_Section):
    """mean + sum_k cos[k-1]*cos(2 pi k t/T) + sin[k-1]*sin(2 pi k t/T)."""
    mean: float
    cos: list[float] = Field(default_factory=list)
    sin: list[float] = Field(default_factory=list)


class ModelSection(_Section):
    T: float = Field(gt=0)
    a: HarmonicSeries
    g: HarmonicSeries


class LevelsSection(_Section):
    delta1: float = Field(gt=0, lt=1)
    delta2: float = Field(gt=0, lt=1)

    @model_validator(mode="after")
    def _ordered(self) -> "LevelsSection":
        if not self.delta1 < self.delta2:
            raise ValueError("levels must satisfy 0 < delta1 < delta2 < 1")
        return self


class NoiseSection(_Section):
    sigma: float = Field(gt=0)


class SimSection(_Section):
    substeps_per_period: int = Field(default=64, ge=1)
    n_paths: int = Field(default=10_000, ge=1)
    t_max_periods: Optional[int] = Field(default=None, ge=1)
    seed: int = Field(default=20240601, ge=0, lt=2 ** 64)
    bridge_correction: bool = True


class OutputsSection(_Section):
    dir: str = "out"


class AnalyzeOptions(_Section):
    points_per_period: int = Field(default=512, ge=8)
    periods: int = Field(default=1, ge=1)
    # Final times of the rho0(t_i, s)^2 curves, in periods
    rho0_final_periods: list[float] = Field(default_factory=lambda: [2.0, 4.0, 6.0, 8.0])


class ProfileOptions(_Section):
    lambdaT: Optional[float] = Field(default=None, gt=0)
    x_min: float = 0.0
    x_max: float = 3.0
    points: int = Field(default=600, ge=2)


class TheoryOptions(_Section):
    periods: int = Field(default=12, ge=1)
    points_per_period: int = Field(default=128, ge=4)
    integral: bool = True
    fixed_t: Optional[float] = Field(default=None, gt=0)
    eta_min: float = Field(default=0.5, gt=0)
    eta_max: float = Field(default=5.0, gt=0)
    eta_points: int = Field(default=200, ge=2)
    sigma_sweep: Optional[str] = None


class CustomProblem(_Section):
    """Polynomial variance and boundary in local time, coefficients low to high."""
    v: list[float] = Field(default_factory=lambda: [0.0, 1.0])
    d: list[float] = Field(default_factory=lambda: [1.0])


class VolterraConstants(_Section):
    Delta: float = Field(gt=0)
    M1: float = Field(gt=0)
    M2: float = Field(gt=0)
    M3: float = Field(gt=0)


class VolterraOptions(_Section):
    problem: Literal[
        "model-psi-minus", "model-psi-down", "constant-boundary", "custom"
    ] = "constant-boundary"
    t_max: float = Field(default=5.0, gt=0)
    n: int = Field(default=2000, ge=4)
    start: float = 0.0
    sigma: Optional[float] = Field(default=None, gt=0)
    boundary: float = Field(default=1.0, gt=0)
    iters: int = Field(default=200, ge=1)
    constants: Optional[VolterraConstants] = None
    custom: CustomProblem = Field(default_factory=CustomProblem)


class SimulateOptions(_Section):
    bins_per_period: Optional[int] = Field(default=None, ge=1)
    psi_minus: bool = True


class Scenario(_Section):
    """A complete run description."""
    name: str = "scenario"
    model: ModelSection
    levels: LevelsSection
    noise: NoiseSection
    sim: SimSection = Field(default_factory=SimSection)
    outputs: OutputsSection = Field(default_factory=OutputsSection)
    analyze: AnalyzeOptions = Field(default_factory=AnalyzeOptions)
    profile: ProfileOptions = Field(default_factory=ProfileOptions)
    theory: TheoryOptions = Field(default_factory=TheoryOptions)
    volterra: VolterraOptions = Field(default_factory=VolterraOptions)
    simulate: SimulateOptions = Field(default_factory=SimulateOptions)

    @property
    def scenario_hash(self) -> str:
        """Short content hash used in provenance lines."""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]

    def with_overrides(
        self,
        sigma: Optional[float] = None,
        seed: Optional[int] = None,
        out: Optional[str] = None,
    ) -> "Scenario":
        """Apply command-line overrides; flags win over file values."""
        update: dict[str, Any] = {}
        if sigma is not None:
            if not sigma > 0:
                raise ScenarioError(f"--sigma must be positive, got {sigma}", key="noise.sigma")
            update["noise"] = NoiseSection(sigma=sigma)
        if seed is not None:
            update["sim"] = self.sim.model_copy(update={"seed": seed})
        if out is not None:
            update["outputs"] = OutputsSection(dir=out)
        return self.model_copy(update=update) if update else self

    def to_model_spec(self):
        """Build the immutable ModelSpec of this scenario."""
        from .coefficients import ModelSpec, PeriodicFunction

        T = self.model.T
        return ModelSpec(
            a=PeriodicFunction(T, self.model.a.mean, tuple(self.model.a.cos), tuple(self.model.a.sin)),
            g=PeriodicFunction(T, self.model.g.mean, tuple(self.model.g.cos), tuple(self.model.g.sin)),
            delta1=self.levels.delta1,
            delta2=self.levels.delta2,
            sigma=self.noise.sigma,
        )

    def to_sim_config(self, settings: Optional[Settings] = None, workers: Optional[int] = None):
        """Build the SimConfig of this scenario."""
        from .montecarlo import SimConfig

        settings = settings or get_settings()
        return SimConfig(
            substeps_per_period=self.sim.substeps_per_period,
            n_paths=self.sim.n_paths,
            t_max_periods=self.sim.t_max_periods,
            seed=self.sim.seed,
            bridge_correction=self.sim.bridge_correction,
            batch_size=settings.simulation.batch_size,
            bridge_switching=settings.simulation.bridge_switching,
            workers=workers or settings.simulation.workers,
        )


# =============================================================================
# YAML HELPERS
# =============================================================================

def _locate_line(text: str, dotted: str) -> Optional[int]:
    """1-based line of the deepest existing node along a dotted key path."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    if node is None:
        return None
    line = node.start_mark.line + 1
    for part in dotted.split("."):
        if isinstance(node, yaml.MappingNode):
            match = next((v for k, v in node.value if k.value == part), None)
        elif isinstance(node, yaml.SequenceNode) and part.isdigit() and int(part) < len(node.value):
            match = node.value[int(part)]
        else:
            match = None
        if match is None:
            break
        node = match
        line = node.start_mark.line + 1
    return line


def _read_yaml(path: Path) -> tuple[dict[str, Any], str]:
    if not path.exists():
        raise ScenarioError(f"Config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(
            f"Invalid YAML in {path}: {getattr(exc, 'problem', exc)}",
            line=mark.line + 1 if mark is not None else None,
        ) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioError(f"Top level of {path} must be a mapping", line=1)
    return data, text


def _raise_validation(exc: ValidationError, text: str, source: Path) -> NoReturn:
    first = exc.errors()[0]
    dotted = ".".join(str(p) for p in first["loc"])
    kind = first["type"]
    if kind == "missing":
        message = f"Missing required key '{dotted}' in {source}"
    else:
        message = f"Invalid value for '{dotted}' in {source}: {first['msg']}"
    raise ScenarioError(message, key=dotted or None, line=_locate_line(text, dotted)) from exc


def load_scenario(path: str | Path) -> Scenario:
    """
    Load and validate a scenario file.

    Raises:
        ScenarioError: naming the dotted key and YAML line on failure
    """
    source = Path(path)
    data, text = _read_yaml(source)
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        _raise_validation(exc, text, source)


# =============================================================================
# CONFIGURATION LOADER
# =============================================================================

class ConfigLoader:
    """
    Loads and manages CyclingLab settings.

    Usage:
        config = ConfigLoader()
        config.load()
        beta = config.settings.theory.beta
    """

    def __init__(self, config_dir: Optional[Path] = None):
        if config_dir is None:
            self.config_dir = Path(__file__).parent.parent / "config"
        else:
            self.config_dir = Path(config_dir)
        self._settings: Optional[Settings] = None
        self._loaded = False

    def load(self) -> None:
        """Load settings.yml; a missing file falls back to built-in defaults."""
        path = self.config_dir / "settings.yml"
        if path.exists():
            data, text = _read_yaml(path)
            try:
                self._settings = Settings.model_validate(data)
            except ValidationError as exc:
                _raise_validation(exc, text, path)
        else:
            self._settings = Settings()
        self._loaded = True

    @property
    def settings(self) -> Settings:
        """Get general settings."""
        if not self._loaded:
            self.load()
        if self._settings is None:
            raise ScenarioError("Settings not loaded")
        return self._settings

    def scenario_path(self, name: str) -> Path:
        """Path of a bundled scenario by name."""
        return self.config_dir / "scenarios" / f"{name}.yml"


def resolve_threads(flag: Optional[int] = None) -> int:
    """Worker count: the flag wins, then the environment, then settings."""
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ScenarioError(
                f"{THREADS_ENV_VAR} must be an integer, got {env!r}", key=THREADS_ENV_VAR
            ) from exc
    return get_settings().simulation.workers


# =============================================================================
# SINGLETON INSTANCE
# =============================================================================

_config: Optional[ConfigLoader] = None


def get_config() -> ConfigLoader:
    """Get the global configuration instance."""
    global _config
    if _config is None:
        _config = ConfigLoader()
        _config.load()
    return _config


def get_settings() -> Settings:
    """Shortcut for get_config().settings."""
    return get_config().settings


def reload_settings(config_dir: Optional[Path] = None) -> Settings:
    """Reload settings from files."""
    global _config
    _config = ConfigLoader(config_dir)
    _config.load()
    return _config.settings
