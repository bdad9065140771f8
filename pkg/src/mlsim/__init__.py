"""Mesoscopic managed-lane simulator for mixed CAV/HDV traffic with reactive tolling."""

from mlsim.fd import FdParams, MixState
from mlsim.policy import MlPolicy
from mlsim.scenario import ScenarioConfig, Vehicle, load_config, sample_population
from mlsim.harness import RunResult, run_monte_carlo, run_once, run_sweep

__all__ = [
    "FdParams",
    "MixState",
    "MlPolicy",
    "ScenarioConfig",
    "Vehicle",
    "load_config",
    "sample_population",
    "RunResult",
    "run_once",
    "run_monte_carlo",
    "run_sweep",
]

__version__ = "0.1.0"
