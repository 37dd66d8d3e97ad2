"""Topology and state validation."""

from __future__ import annotations

import pytest

from waditwin.plant import (
    ConfigError,
    PumpState,
    TankSpec,
    ValveState,
    initial_state,
    load_topology,
    tag_kind,
    tag_stage,
)

from conftest import make_doc, single_tank_doc, single_tank_topology


def test_tag_convention_roundtrip():
    assert tag_stage("1_LT_001") == 1
    assert tag_stage("2_MCV_101") == 2
    assert tag_kind("2_MCV_101") == "MCV"
    assert tag_kind("3_P_001") == "P"
    with pytest.raises(ConfigError):
        tag_stage("PUMP_7")
    with pytest.raises(ConfigError):
        tag_kind("1_XYZ_001")


def test_cross_section_is_capacity_over_hundred():
    tank = TankSpec(tag="1_T_001", capacity_liters=2500.0)
    assert tank.cross_section_area == 25.0
    assert tank.level_tag == "1_T_001"  # defaults to its own tag


def test_load_topology_accepts_single_tank_doc():
    topo = single_tank_topology()
    assert set(topo.tanks) == {"1_T_001"}
    assert topo.level_units() == {"1_LT_001": ("1_T_001",)}
    assert topo.unit_area("1_LT_001") == 25.0


def test_shared_level_tag_sums_areas():
    doc = make_doc(
        tanks=[
            {"tag": "1_T_001", "capacity_liters": 2500, "level_tag": "1_LT_001"},
            {"tag": "1_T_002", "capacity_liters": 2500, "level_tag": "1_LT_001"},
        ],
        instruments=[{"tag": "1_LT_001", "kind": "LT",
                      "measures": ["1_T_001", "1_T_002"]}],
    )
    topo = load_topology(doc)
    assert topo.level_units() == {"1_LT_001": ("1_T_001", "1_T_002")}
    assert topo.unit_area("1_LT_001") == 50.0
    assert topo.level_tag_of("1_T_002") == "1_LT_001"


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d["paths"][0].update(source="9_T_009"), "unknown source"),
        (lambda d: d["paths"][1].update(sink="9_T_009"), "unknown sink"),
        (lambda d: d["paths"][0].update(gates=["1_MV_009"]), "unknown gate"),
        (lambda d: d["paths"][0].update(gates=["1_LT_001"]), "not a valve or pump"),
        (lambda d: d["paths"][0].update(fit_tag="1_MV_002"), "not a FIT"),
        (lambda d: d["tanks"].append(dict(d["tanks"][0])), "duplicate tank"),
    ],
)
def test_load_topology_rejects_dangling_references(mutate, message):
    doc = single_tank_doc()
    mutate(doc)
    with pytest.raises(ConfigError, match=message):
        load_topology(doc)


def test_load_topology_rejects_mismatched_unit_overflow():
    doc = make_doc(
        tanks=[
            {"tag": "1_T_001", "capacity_liters": 2500, "level_tag": "1_LT_001",
             "overflow_level_pct": 105},
            {"tag": "1_T_002", "capacity_liters": 2500, "level_tag": "1_LT_001",
             "overflow_level_pct": 100},
        ],
        instruments=[{"tag": "1_LT_001", "kind": "LT",
                      "measures": ["1_T_001", "1_T_002"]}],
    )
    with pytest.raises(ConfigError, match="overflow"):
        load_topology(doc)


def test_initial_state_defaults_are_quiescent():
    topo = single_tank_topology()
    state = initial_state(topo, {"1_LT_001": 40.0})
    assert state.tick == 0
    assert state.levels == {"1_LT_001": 40.0}
    assert state.valve_states["1_MV_001"] is ValveState.CLOSED
    assert state.valve_openings["1_MV_001"] == 0.0
    assert all(v == 0.0 for v in state.flows.values())
    assert state.spilled_liters == 0.0


def test_initial_state_validates_levels():
    topo = single_tank_topology()
    with pytest.raises(ConfigError, match="unknown level tag"):
        initial_state(topo, {"9_LT_009": 10.0})
    with pytest.raises(ConfigError, match="outside"):
        initial_state(topo, {"1_LT_001": 180.0})
    with pytest.raises(ConfigError, match="outside"):
        initial_state(topo, {"1_LT_001": -1.0})
    # units left out start empty
    assert initial_state(topo).levels == {"1_LT_001": 0.0}


def test_pump_states_seeded_for_every_pump():
    doc = single_tank_doc()
    doc["instruments"].append({"tag": "1_P_003", "kind": "P"})
    doc["paths"][1]["gates"] = ["1_MV_002", "1_P_003"]
    topo = load_topology(doc)
    state = initial_state(topo, {"1_LT_001": 50.0})
    assert state.pump_states["1_P_003"] is PumpState.STOPPED
    assert topo.pump_source_units("1_P_003") == ("1_LT_001",)


def test_stored_liters_uses_unit_areas():
    topo = single_tank_topology()
    state = initial_state(topo, {"1_LT_001": 40.0})
    assert state.stored_liters(topo) == pytest.approx(1000.0)
