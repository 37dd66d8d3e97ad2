"""Published variable clusters and their addressing scheme.

Every field device is mirrored into the engine as one cluster of named
fields at a path like ``P1-CompactRIO/HMI_HOST/HMI_1_LT_001``. Clusters are
plain dicts so they serialize directly onto the wire. Field names follow the
controller's host naming (hence ``ALL_`` with its trailing underscore).

Ownership is by convention, not enforcement: the plant republishes process
values (PV, State, Running, flow readings) every tick, while operator-side
fields (SIMULATION, SIM_PV, alarm thresholds, Auto, command bits) persist
until someone overwrites them. Nothing stops a network client from writing
any field of any cluster; that openness is the modeled weakness.
"""

from __future__ import annotations

from typing import Any

from .plant import Instrument, PlantState, PlantTopology, PumpState, ValveState

LEVEL = "level"
VALVE = "valve"
PUMP = "pump"
SIGNAL = "signal"  # analyzers, flow transmitters, level switches

DEFAULT_BAND = {"SAHH": 90.0, "SAH": 70.0, "SAL": 60.0, "SALL": 40.0, "S_EMPTY": 35.0}

_KIND_BY_INSTRUMENT = {
    "LT": LEVEL,
    "MV": VALVE,
    "MCV": VALVE,
    "P": PUMP,
    "AIT": SIGNAL,
    "FIT": SIGNAL,
    "LS": SIGNAL,
}


def variable_path(tag: str) -> str:
    """Engine path for a tag: host per stage, HMI-mirrored variable name."""
    stage = tag.split("_", 1)[0]
    return f"P{stage}-CompactRIO/HMI_HOST/HMI_{tag}"


def path_tag(path: str) -> str:
    """Inverse of variable_path for well-formed paths."""
    leaf = path.rsplit("/", 1)[-1]
    return leaf[4:] if leaf.startswith("HMI_") else leaf

VIOLATIONS_PATH = "DETECTOR/violations"


def cluster_kind(instrument: Instrument) -> str:
    return _KIND_BY_INSTRUMENT[instrument.kind]


def new_level_cluster(pv: float = 0.0) -> dict[str, Any]:
    cluster: dict[str, Any] = {
        "PV": pv,
        "SIM_PV": 0.0,
        "SIMULATION": False,
        **DEFAULT_BAND,
        "A_EMPTY": False,
        "ALL_": False,
        "AL": False,
        "AH": False,
        "AHH": False,
        "Band_OK": True,
    }
    refresh_level_alarms(cluster)
    return cluster


def new_valve_cluster(modulating: bool = False) -> dict[str, Any]:
    return {
        "Auto": True,
        "Open_Command": False,
        "Close_Command": False,
        "Reset": False,
        "Available": True,
        "Fully_Open": False,
        "Fully_Close": True,
        "Failed_to_Open": False,
        "Failed_to_Close": False,
        "Status": "Closed",
        "State": ValveState.CLOSED.value,
        "Opening": 0.0,
        "Opening_Setpoint": 1.0 if not modulating else 0.0,
    }


def new_pump_cluster() -> dict[str, Any]:
    return {
        "Auto": True,
        "Start_Command": False,
        "Stop_Command": False,
        "Reset": False,
        "Running": False,
        "Tripped": False,
        "Status": "Stopped",
    }


def new_signal_cluster(pv: float = 0.0) -> dict[str, Any]:
    return {"PV": pv, "SIM_PV": 0.0, "SIMULATION": False}


def seed_cluster(instrument: Instrument) -> dict[str, Any]:
    kind = cluster_kind(instrument)
    if kind == LEVEL:
        return new_level_cluster()
    if kind == VALVE:
        return new_valve_cluster(modulating=instrument.kind == "MCV")
    if kind == PUMP:
        return new_pump_cluster()
    return new_signal_cluster(pv=instrument.baseline_value)


def effective_pv(cluster: dict[str, Any]) -> float:
    """The value controllers act on: the simulated one when SIMULATION is set."""
    if cluster.get("SIMULATION"):
        return float(cluster.get("SIM_PV", 0.0))
    return float(cluster.get("PV", 0.0))


def band_of(cluster: dict[str, Any]) -> dict[str, float]:
    return {k: float(cluster.get(k, DEFAULT_BAND[k])) for k in DEFAULT_BAND}


def refresh_level_alarms(cluster: dict[str, Any]) -> None:
    """Recompute alarm booleans from the effective PV and current thresholds.

    Threshold writes are honored no matter how implausible; an out-of-order
    band only clears Band_OK so downstream readers can see the value quality
    is suspect. Alarm flags use inclusive comparisons on the side they guard.
    """
    pv = effective_pv(cluster)
    band = band_of(cluster)
    cluster["A_EMPTY"] = pv <= band["S_EMPTY"]
    cluster["ALL_"] = pv <= band["SALL"]
    cluster["AL"] = pv <= band["SAL"]
    cluster["AH"] = pv >= band["SAH"]
    cluster["AHH"] = pv >= band["SAHH"]
    cluster["Band_OK"] = (
        band["S_EMPTY"] <= band["SALL"] <= band["SAL"] < band["SAH"] <= band["SAHH"]
    )


def _valve_status(state: ValveState, opening: float) -> str:
    if state is ValveState.TRANSITIONING:
        return "Transitioning"
    if state is ValveState.OPEN:
        return "Open" if opening >= 1.0 else f"Open {opening * 100:.0f}%"
    return "Closed"


def plant_updates(topology: PlantTopology, state: PlantState) -> dict[str, dict[str, Any]]:
    """Field updates the plant publishes after a physics tick.

    Only process-truth fields appear here; operator fields are left alone so
    persisted overrides (simulation mode, thresholds, Auto) survive.
    """
    updates: dict[str, dict[str, Any]] = {}
    for tag, inst in topology.instruments.items():
        path = variable_path(tag)
        if inst.kind == "LT":
            updates[path] = {"PV": state.levels[tag]}
        elif inst.kind == "AIT":
            updates[path] = {"PV": state.analyzer_values[tag]}
        elif inst.kind == "FIT":
            flow = state.flows[inst.on_path] if inst.on_path else 0.0
            updates[path] = {"PV": flow}
        elif inst.kind == "LS":
            updates[path] = {"PV": 1.0 if state.switch_states.get(tag) else 0.0}
        elif inst.kind in ("MV", "MCV"):
            vstate = state.valve_states[tag]
            opening = state.valve_openings[tag]
            updates[path] = {
                "State": vstate.value,
                "Opening": opening,
                "Fully_Open": vstate is ValveState.OPEN and opening >= 1.0,
                "Fully_Close": vstate is ValveState.CLOSED,
                "Status": _valve_status(vstate, opening),
            }
        elif inst.kind == "P":
            pstate = state.pump_states[tag]
            updates[path] = {
                "Running": pstate is PumpState.RUNNING,
                "Tripped": pstate is PumpState.DRY_RUN_TRIPPED,
                "Status": pstate.value,
            }
    return updates
