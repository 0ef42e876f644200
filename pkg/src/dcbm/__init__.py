"""PID-regulated buyback-and-burn simulator for a constant-product AMM."""

from .controller import ActuatorConfig, CertConfig, DCBMController, Gains
from .harness import ScenarioConfig, run_batch, run_monte_carlo, run_once, scenario
from .policies import DCBM, FixedRate, MPCOracle, NoBuyback, Threshold, dcbm_cert
from .world import World, WorldParams, simulate

__version__ = "0.1.0"

__all__ = [
    "ActuatorConfig", "CertConfig", "DCBM", "DCBMController", "FixedRate", "Gains", "MPCOracle", "NoBuyback",
    "ScenarioConfig", "Threshold", "World", "WorldParams", "dcbm_cert", "run_batch", "run_monte_carlo",
    "run_once", "scenario", "simulate",
]
