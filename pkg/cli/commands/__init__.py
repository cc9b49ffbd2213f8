"""
CyclingLab Commands Package

One module per subcommand. Each `run_*` function takes a CommandContext
and returns the paths it wrote.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from src.coefficients import ModelSpec
from src.config import Scenario, Settings, get_config, get_settings, load_scenario, resolve_threads
from src.emit import Provenance


@dataclass(frozen=True)
class GlobalOptions:
    """Values of the global flags."""
    config: Optional[Path] = None
    out: Optional[str] = None
    seed: Optional[int] = None
    threads: Optional[int] = None
    sigma: Optional[float] = None


@dataclass
class CommandContext:
    scenario: Scenario
    spec: ModelSpec
    settings: Settings
    out_dir: Path
    threads: int
    provenance: Provenance

    def path(self, name: str) -> Path:
        return self.out_dir / name


def scenario_file(options: GlobalOptions) -> Path:
    return options.config or get_config().scenario_path("reference")


def build_context(options: GlobalOptions) -> CommandContext:
    """Load the scenario, apply flag overrides and create the output directory."""
    scenario = load_scenario(scenario_file(options)).with_overrides(
        sigma=options.sigma, seed=options.seed, out=options.out,
    )
    out_dir = Path(scenario.outputs.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return CommandContext(
        scenario=scenario,
        spec=scenario.to_model_spec(),
        settings=get_settings(),
        out_dir=out_dir,
        threads=resolve_threads(options.threads),
        provenance=Provenance(scenario.scenario_hash, scenario.sim.seed),
    )
