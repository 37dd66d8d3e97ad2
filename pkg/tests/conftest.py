"""Shared builders and fixtures.

Builders construct small synthetic plants inline so unit tests do not lean on
the shipped configuration; fixtures expose the shipped plant for tests that
exercise it on purpose.
"""

from __future__ import annotations

import pytest

from waditwin.plant import PlantTopology, initial_state, load_topology


def make_doc(
    *,
    tanks: list[dict] | None = None,
    paths: list[dict] | None = None,
    instruments: list[dict] | None = None,
) -> dict:
    return {
        "tanks": tanks or [],
        "paths": paths or [],
        "instruments": instruments or [],
    }


def single_tank_doc(
    *,
    capacity: float = 2500.0,
    overflow: float = 100.0,
    inflow: float = 60.0,
    outflow: float = 60.0,
) -> dict:
    """One tank with a gated external feed and a gated drain."""
    return make_doc(
        tanks=[{"tag": "1_T_001", "capacity_liters": capacity,
                "overflow_level_pct": overflow, "level_tag": "1_LT_001"}],
        instruments=[
            {"tag": "1_LT_001", "kind": "LT", "measures": ["1_T_001"]},
            {"tag": "1_MV_001", "kind": "MV"},
            {"tag": "1_MV_002", "kind": "MV"},
        ],
        paths=[
            {"path_id": "feed", "source": "EXTERNAL", "sink": "1_T_001",
             "gates": ["1_MV_001"], "nominal_rate_lpm": inflow},
            {"path_id": "drain", "source": "1_T_001", "sink": "DRAIN",
             "gates": ["1_MV_002"], "nominal_rate_lpm": outflow},
        ],
    )


def single_tank_topology(**kwargs) -> PlantTopology:
    return load_topology(single_tank_doc(**kwargs))


@pytest.fixture
def wadi_topology() -> PlantTopology:
    from waditwin.configs import default_topology

    return default_topology()


def opened(state, *tags):
    """Force valves open / pumps running directly on ground truth."""
    from waditwin.plant import PumpState, ValveState

    for tag in tags:
        if tag in state.pump_states:
            state.pump_states[tag] = PumpState.RUNNING
        else:
            state.valve_states[tag] = ValveState.OPEN
            state.valve_openings[tag] = 1.0
    return state
