"""Stage controllers, command application, and the dry-run relay."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from waditwin.clusters import (
    LEVEL,
    SIGNAL,
    new_level_cluster,
    new_signal_cluster,
    variable_path,
)
from waditwin.control import (
    DRY_SOURCE_LEVEL_PCT,
    AlarmBand,
    CommandKind,
    ControlCommand,
    ControlConfig,
    ControlState,
    LevelClass,
    PublishedView,
    apply_commands,
    classify_level,
    commands_from_writes,
    dry_run_monitor,
    plc_scan,
    scan_tags,
)
from waditwin.engine import VariableEngine, WriteRecord
from waditwin.plant import ConfigError, PumpState, ValveState, initial_state

from conftest import make_doc, single_tank_topology


BAND = AlarmBand()  # 90 / 70 / 60 / 40 / 35


def view(rw=50.0, er=65.0, ret=0.0, ait=0.5, ls=False, demand=1.0) -> PublishedView:
    clusters = {
        "1_LT_001": new_level_cluster(pv=rw),
        "2_LT_002": new_level_cluster(pv=er),
        "3_LT_001": new_level_cluster(pv=ret),
        "1_AIT_002": new_signal_cluster(pv=ait),
        "2_LS_101": new_signal_cluster(pv=1.0 if ls else 0.0),
    }
    return PublishedView(clusters=clusters, demand_fraction=demand)


def by_target(commands: list[ControlCommand]) -> dict[str, ControlCommand]:
    return {c.target: c for c in commands}


# --- level classification ---------------------------------------------------


def test_classify_level_boundaries():
    # low thresholds are inclusive downward, high thresholds upward
    assert classify_level(35.0, BAND) is LevelClass.EMPTY
    assert classify_level(35.0001, BAND) is LevelClass.LL
    assert classify_level(40.0, BAND) is LevelClass.LL
    assert classify_level(40.0001, BAND) is LevelClass.L
    assert classify_level(60.0, BAND) is LevelClass.L
    assert classify_level(60.0001, BAND) is LevelClass.NORMAL
    assert classify_level(69.9999, BAND) is LevelClass.NORMAL
    assert classify_level(70.0, BAND) is LevelClass.H
    assert classify_level(89.9999, BAND) is LevelClass.H
    assert classify_level(90.0, BAND) is LevelClass.HH


@given(st.floats(min_value=-50.0, max_value=200.0),
       st.floats(min_value=-50.0, max_value=200.0))
def test_classify_level_is_monotone(a: float, b: float):
    lo, hi = sorted((a, b))
    assert classify_level(lo, BAND) <= classify_level(hi, BAND)


def test_classify_level_rejects_non_finite():
    with pytest.raises(ValueError):
        classify_level(float("nan"), BAND)


def test_alarm_band_ordering_enforced():
    with pytest.raises(ConfigError):
        AlarmBand(sahh=50.0, sah=70.0)
    with pytest.raises(ConfigError):
        AlarmBand(sal=30.0, sall=40.0)


# --- one controller scan ----------------------------------------------------


def test_inlet_latch_opens_low_low_and_closes_high():
    cfg = ControlConfig()
    latches = ControlState()
    cmds, latches = plc_scan(view(rw=40.0), latches, cfg, 0)
    assert by_target(cmds)["1_MV_001"].kind is CommandKind.OPEN
    # held open through the normal band
    cmds, latches = plc_scan(view(rw=65.0), latches, cfg, 1)
    assert by_target(cmds)["1_MV_001"].kind is CommandKind.OPEN
    assert latches.inlet_open
    cmds, latches = plc_scan(view(rw=70.0), latches, cfg, 2)
    assert by_target(cmds)["1_MV_001"].kind is CommandKind.CLOSE
    assert not latches.inlet_open


def test_refill_latch_and_transfer_gate():
    cfg = ControlConfig()
    latches = ControlState()
    # reservoir at L turns the refill wish on
    cmds, latches = plc_scan(view(rw=55.0, er=60.0), latches, cfg, 0)
    cmap = by_target(cmds)
    assert latches.refill_wanted
    assert cmap["1_P_003"].kind is CommandKind.START
    assert cmap["2_MV_003"].kind is CommandKind.OPEN
    # raw water exactly on its low-low mark blocks the draw
    cmds, latches = plc_scan(view(rw=40.0, er=60.0), latches, cfg, 1)
    cmap = by_target(cmds)
    assert latches.refill_wanted  # wish persists, gate blocks
    assert cmap["1_P_003"].kind is CommandKind.STOP
    assert cmap["2_MV_003"].kind is CommandKind.CLOSE
    # reservoir reaching H drops the wish
    cmds, latches = plc_scan(view(rw=55.0, er=70.0), latches, cfg, 2)
    assert not latches.refill_wanted
    assert by_target(cmds)["1_P_003"].kind is CommandKind.STOP


def test_supply_latch_cuts_on_empty_resumes_at_low():
    cfg = ControlConfig()
    latches = ControlState()
    cmds, latches = plc_scan(view(er=35.0), latches, cfg, 0)
    cmap = by_target(cmds)
    assert not latches.supply_on
    assert cmap["2_P_003"].kind is CommandKind.STOP
    assert cmap["2_MV_004"].kind is CommandKind.CLOSE
    assert cmap["2_MCV_101"].value == 0.0
    # still off in the dead zone between EMPTY and L
    cmds, latches = plc_scan(view(er=38.0), latches, cfg, 1)
    assert not latches.supply_on
    cmds, latches = plc_scan(view(er=41.0), latches, cfg, 2)
    cmap = by_target(cmds)
    assert latches.supply_on
    assert cmap["2_P_003"].kind is CommandKind.START
    assert cmap["2_MCV_101"].value == 1.0


def test_quality_interlock_closes_valve_but_not_pump():
    cfg = ControlConfig()
    cmds, _ = plc_scan(view(er=60.0, ait=2.5), ControlState(), cfg, 0)
    cmap = by_target(cmds)
    assert cmap["2_MV_003"].kind is CommandKind.CLOSE
    assert cmap["1_P_003"].kind is CommandKind.START  # relay guards the pump


def test_demand_fraction_clamped_into_unit_interval():
    cfg = ControlConfig()
    cmds, _ = plc_scan(view(demand=1.7), ControlState(), cfg, 0)
    assert by_target(cmds)["2_MCV_101"].value == 1.0
    cmds, _ = plc_scan(view(demand=-0.2), ControlState(), cfg, 0)
    assert by_target(cmds)["2_MCV_101"].value == 0.0


def test_consumer_drain_follows_level_switch():
    cfg = ControlConfig()
    cmds, _ = plc_scan(view(ls=True), ControlState(), cfg, 0)
    assert by_target(cmds)["2_MV_101"].kind is CommandKind.OPEN
    cmds, _ = plc_scan(view(ls=False), ControlState(), cfg, 0)
    assert by_target(cmds)["2_MV_101"].kind is CommandKind.CLOSE


def test_return_pump_hysteresis():
    cfg = ControlConfig()
    latches = ControlState()
    cmds, latches = plc_scan(view(ret=5.0), latches, cfg, 0)
    assert by_target(cmds)["3_P_001"].kind is CommandKind.START
    cmds, latches = plc_scan(view(ret=3.0), latches, cfg, 1)
    assert by_target(cmds)["3_P_001"].kind is CommandKind.START  # held
    cmds, latches = plc_scan(view(ret=1.0), latches, cfg, 2)
    assert by_target(cmds)["3_P_001"].kind is CommandKind.STOP


def test_scan_emits_one_command_per_controlled_device():
    cfg = ControlConfig()
    cmds, _ = plc_scan(view(), ControlState(), cfg, 7)
    targets = [c.target for c in cmds]
    assert len(targets) == len(set(targets))
    expected = {cfg.inlet_valve, *cfg.drain_valves, cfg.transfer_pump,
                cfg.transfer_valve, cfg.booster_pump, cfg.supply_valve,
                *cfg.demand_valves, cfg.return_pump,
                *[d for _, d in cfg.consumer_drains]}
    assert set(targets) == expected
    assert all(c.tick == 7 for c in cmds)


def test_scan_believes_simulation_overrides():
    v = view(rw=80.0)
    v.clusters["1_LT_001"]["SIMULATION"] = True
    v.clusters["1_LT_001"]["SIM_PV"] = 35.0
    cmds, _ = plc_scan(v, ControlState(), ControlConfig(), 0)
    assert by_target(cmds)["1_MV_001"].kind is CommandKind.OPEN


def test_published_view_from_engine_reads_clusters():
    engine = VariableEngine()
    for tag in ("1_LT_001", "2_LT_002", "3_LT_001"):
        engine.create(variable_path(tag), new_level_cluster(), kind=LEVEL)
    for tag in ("1_AIT_002", "2_LS_101"):
        engine.create(variable_path(tag), new_signal_cluster(), kind=SIGNAL)
    engine.write(variable_path("1_LT_001"), {"PV": 44.0}, source="PLANT")
    cfg = ControlConfig()
    v = PublishedView.from_engine(engine, scan_tags(cfg), demand_fraction=0.25)
    assert v.signal("1_LT_001") == 44.0
    assert v.level_class("1_LT_001") is LevelClass.L
    assert v.demand_fraction == 0.25


def test_scan_tags_lists_every_input_once():
    tags = scan_tags(ControlConfig())
    assert tags == ("1_LT_001", "2_LT_002", "3_LT_001", "1_AIT_002", "2_LS_101")


def test_control_config_from_doc_overrides():
    cfg = ControlConfig.from_doc({
        "dry_run_trip_s": 120.0,
        "return_on_pct": 8.0,
        "interlocks": [{"analyzer": "1_AIT_001", "above": 1.5, "closes": "1_MV_001"}],
    })
    assert cfg.dry_run_trip_s == 120.0
    assert cfg.return_on_pct == 8.0
    assert cfg.interlocks[0].analyzer == "1_AIT_001"
    assert cfg.inlet_valve == "1_MV_001"  # defaults survive


# --- applying commands to ground truth ---------------------------------------


def pump_tank_topology():
    doc = make_doc(
        tanks=[{"tag": "1_T_001", "capacity_liters": 1000.0,
                "overflow_level_pct": 100.0, "level_tag": "1_LT_001"}],
        instruments=[
            {"tag": "1_LT_001", "kind": "LT", "measures": ["1_T_001"]},
            {"tag": "1_MV_001", "kind": "MV"},
            {"tag": "1_P_001", "kind": "P"},
        ],
        paths=[
            {"path_id": "draw", "source": "1_T_001", "sink": "DRAIN",
             "gates": ["1_P_001"], "nominal_rate_lpm": 60.0},
        ],
    )
    from waditwin.plant import load_topology

    return load_topology(doc)


def test_apply_respects_auto_flag_for_plc_only():
    topo = pump_tank_topology()
    state = initial_state(topo, {"1_LT_001": 50.0})
    plc = ControlCommand("1_MV_001", CommandKind.OPEN, "PLC1", 0)
    manual = ControlCommand("1_MV_001", CommandKind.OPEN, "attacker", 0)
    applied = apply_commands(state, topo, [plc], {"1_MV_001": False})
    assert applied == [] and state.valve_states["1_MV_001"] is ValveState.CLOSED
    applied = apply_commands(state, topo, [manual], {"1_MV_001": False})
    assert applied == [manual] and state.valve_states["1_MV_001"] is ValveState.OPEN


def test_apply_last_command_wins():
    topo = pump_tank_topology()
    state = initial_state(topo, {"1_LT_001": 50.0})
    cmds = [
        ControlCommand("1_MV_001", CommandKind.OPEN, "PLC1", 0),
        ControlCommand("1_MV_001", CommandKind.CLOSE, "operator", 0),
    ]
    apply_commands(state, topo, cmds, {})
    assert state.valve_states["1_MV_001"] is ValveState.CLOSED


def test_apply_set_opening_clamps_and_tracks_state():
    topo = pump_tank_topology()
    state = initial_state(topo, {"1_LT_001": 50.0})
    apply_commands(state, topo,
                   [ControlCommand("1_MV_001", CommandKind.SET_OPENING, "op", 0, 0.3)], {})
    assert state.valve_openings["1_MV_001"] == 0.3
    assert state.valve_states["1_MV_001"] is ValveState.OPEN
    apply_commands(state, topo,
                   [ControlCommand("1_MV_001", CommandKind.SET_OPENING, "op", 0, -2.0)], {})
    assert state.valve_openings["1_MV_001"] == 0.0
    assert state.valve_states["1_MV_001"] is ValveState.CLOSED


def test_tripped_pump_ignores_start_until_reset():
    topo = pump_tank_topology()
    state = initial_state(topo, {"1_LT_001": 50.0})
    state.pump_states["1_P_001"] = PumpState.DRY_RUN_TRIPPED
    applied = apply_commands(
        state, topo, [ControlCommand("1_P_001", CommandKind.START, "PLC1", 0)], {})
    assert applied == [] and state.pump_states["1_P_001"] is PumpState.DRY_RUN_TRIPPED
    apply_commands(state, topo, [ControlCommand("1_P_001", CommandKind.RESET, "op", 0)], {})
    assert state.pump_states["1_P_001"] is PumpState.STOPPED
    apply_commands(state, topo, [ControlCommand("1_P_001", CommandKind.START, "PLC1", 0)], {})
    assert state.pump_states["1_P_001"] is PumpState.RUNNING


def test_commands_from_writes_maps_fields_and_skips_plant_sources():
    topo = pump_tank_topology()
    def rec(seq, tag, fields, source):
        return WriteRecord(seq=seq, path=variable_path(tag), fields=fields,
                           source=source, version=seq)

    records = [
        rec(1, "1_MV_001", {"Open_Command": True}, "attacker"),
        rec(2, "1_MV_001", {"Opening_Setpoint": 0.5}, "console"),
        rec(3, "1_P_001", {"Start_Command": True}, "console"),
        rec(4, "1_P_001", {"Reset": True}, "console"),
        # controller and plant writes never loop back into commands
        rec(5, "1_MV_001", {"Close_Command": True}, "PLC1"),
        rec(6, "1_LT_001", {"PV": 10.0}, "PLANT"),
        # data-only fields on an actuator are not commands
        rec(7, "1_MV_001", {"Auto": False}, "attacker"),
    ]
    cmds = commands_from_writes(records, topo, tick=3)
    kinds = [(c.target, c.kind, c.issued_by) for c in cmds]
    assert kinds == [
        ("1_MV_001", CommandKind.OPEN, "attacker"),
        ("1_MV_001", CommandKind.SET_OPENING, "console"),
        ("1_P_001", CommandKind.START, "console"),
        ("1_P_001", CommandKind.RESET, "console"),
    ]
    assert cmds[1].value == 0.5


def test_describe_strings():
    assert ControlCommand("1_MV_001", CommandKind.OPEN, "PLC1", 0).describe() == \
        "PLC1:1_MV_001=Open"
    assert ControlCommand("2_MCV_101", CommandKind.SET_OPENING, "PLC2", 0, 0.5).describe() == \
        "PLC2:2_MCV_101=SetOpening(0.5)"


# --- dry-run relay ------------------------------------------------------------


def test_dry_run_relay_trips_after_sustained_dry_draw():
    topo = pump_tank_topology()
    state = initial_state(topo, {"1_LT_001": DRY_SOURCE_LEVEL_PCT})
    state.pump_states["1_P_001"] = PumpState.RUNNING
    counters: dict[str, int] = {}
    for _ in range(4):
        counters = dry_run_monitor(topo, state, counters, trip_ticks=5)
        assert state.pump_states["1_P_001"] is PumpState.RUNNING
    counters = dry_run_monitor(topo, state, counters, trip_ticks=5)
    assert state.pump_states["1_P_001"] is PumpState.DRY_RUN_TRIPPED


def test_dry_run_counter_resets_when_water_returns():
    topo = pump_tank_topology()
    state = initial_state(topo, {"1_LT_001": 0.1})
    state.pump_states["1_P_001"] = PumpState.RUNNING
    counters = dry_run_monitor(topo, state, {}, trip_ticks=3)
    assert counters["1_P_001"] == 1
    state.levels["1_LT_001"] = 10.0
    counters = dry_run_monitor(topo, state, counters, trip_ticks=3)
    assert counters == {}
    state.levels["1_LT_001"] = 0.1
    counters = dry_run_monitor(topo, state, {}, trip_ticks=3)
    assert counters["1_P_001"] == 1  # counts from scratch


def test_dry_run_ignores_stopped_pumps():
    topo = pump_tank_topology()
    state = initial_state(topo, {"1_LT_001": 0.0})
    counters = dry_run_monitor(topo, state, {}, trip_ticks=1)
    assert counters == {} and state.pump_states["1_P_001"] is PumpState.STOPPED
