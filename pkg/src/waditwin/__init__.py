"""Deterministic twin of a three-stage water distribution plant.

The package couples a tank-and-pipe physics core to a publish-subscribe
variable engine, a scan-cycle controller, an invariant-based detector,
and an attack toolkit that can script interventions against the running
plant over the network or in process.
"""
from .physics import StepConfig, estimate_level
from .plant import (
    ConfigError,
    PlantState,
    PlantTopology,
    PumpState,
    ValveState,
    initial_state,
    load_topology,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "PlantState",
    "PlantTopology",
    "PumpState",
    "StepConfig",
    "ValveState",
    "estimate_level",
    "initial_state",
    "load_topology",
    "__version__",
]
