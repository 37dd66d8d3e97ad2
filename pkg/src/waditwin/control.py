"""Stage controllers: level classification, scan logic, actuation rules.

Each stage's controller reads only the engine's published clusters (including
any spoofed values sitting in them) plus its own latch memory, and emits the
full set of desired-state commands every scan. Scans are deterministic: the
same published view and latch state always yield the same command list.

Actuation honors manual override: a command issued by a controller is applied
only while the device's Auto flag is true, while commands arriving from the
network (operators or attackers, indistinguishable) are always applied.
Dry-run protection is a device-level relay: a pump running on an empty source
for long enough latches a trip that only an explicit Reset clears.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Any, Iterable

from .clusters import band_of, effective_pv, variable_path
from .engine import VariableEngine, WriteRecord
from .plant import (
    ConfigError,
    PlantState,
    PlantTopology,
    PumpState,
    ValveState,
    tag_stage,
)


class LevelClass(IntEnum):
    EMPTY = 0
    LL = 1
    L = 2
    NORMAL = 3
    H = 4
    HH = 5


@dataclass(frozen=True)
class AlarmBand:
    """Level thresholds, percent of capacity. Ordering is validated."""

    sahh: float = 90.0
    sah: float = 70.0
    sal: float = 60.0
    sall: float = 40.0
    s_empty: float = 35.0

    def __post_init__(self) -> None:
        if not (self.s_empty <= self.sall <= self.sal < self.sah <= self.sahh):
            raise ConfigError(
                "alarm band out of order: need S_EMPTY <= SALL <= SAL < SAH <= SAHH"
            )

    @classmethod
    def from_cluster(cls, cluster: dict[str, Any]) -> "AlarmBand":
        b = band_of(cluster)
        return cls(sahh=b["SAHH"], sah=b["SAH"], sal=b["SAL"],
                   sall=b["SALL"], s_empty=b["S_EMPTY"])


def classify_level(pv: float, band: AlarmBand) -> LevelClass:
    """Map a level value onto the six-state alarm ladder.

    Boundaries are inclusive downward: a value sitting exactly on a low
    threshold belongs to the lower class, one exactly on a high threshold
    belongs to the higher class.
    """
    if not math.isfinite(pv):
        raise ValueError(f"level value must be finite, got {pv!r}")
    if pv <= band.s_empty:
        return LevelClass.EMPTY
    if pv <= band.sall:
        return LevelClass.LL
    if pv <= band.sal:
        return LevelClass.L
    if pv < band.sah:
        return LevelClass.NORMAL
    if pv < band.sahh:
        return LevelClass.H
    return LevelClass.HH


class CommandKind(Enum):
    OPEN = "Open"
    CLOSE = "Close"
    SET_OPENING = "SetOpening"
    START = "Start"
    STOP = "Stop"
    RESET = "Reset"


@dataclass(frozen=True)
class ControlCommand:
    target: str
    kind: CommandKind
    issued_by: str
    tick: int
    value: float | None = None

    def describe(self) -> str:
        if self.kind is CommandKind.SET_OPENING:
            return f"{self.issued_by}:{self.target}={self.kind.value}({self.value:g})"
        return f"{self.issued_by}:{self.target}={self.kind.value}"


@dataclass(frozen=True)
class QualityInterlock:
    """Shut a valve while an analyzer reads above a limit."""

    analyzer: str
    above: float
    closes: str


@dataclass(frozen=True)
class ControlConfig:
    """Role assignment for the stage controllers plus protection settings."""

    rw_level: str = "1_LT_001"
    er_level: str = "2_LT_002"
    return_level: str = "3_LT_001"
    inlet_valve: str = "1_MV_001"
    drain_valves: tuple[str, ...] = ("1_MV_002", "1_MV_003")
    transfer_pump: str = "1_P_003"
    transfer_valve: str = "2_MV_003"
    booster_pump: str = "2_P_003"
    supply_valve: str = "2_MV_004"
    demand_valves: tuple[str, ...] = ("2_MCV_101", "2_MCV_201")
    consumer_drains: tuple[tuple[str, str], ...] = (("2_LS_101", "2_MV_101"),)
    return_pump: str = "3_P_001"
    return_on_pct: float = 5.0
    return_off_pct: float = 1.0
    interlocks: tuple[QualityInterlock, ...] = (
        QualityInterlock(analyzer="1_AIT_002", above=2.0, closes="2_MV_003"),
    )
    # Plant seconds of sustained dry running before the relay trips, so the
    # protection behaves the same at any time compression.
    dry_run_trip_s: float = 300.0

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "ControlConfig":
        kw: dict[str, Any] = {}
        for name in ("rw_level", "er_level", "return_level", "inlet_valve",
                     "transfer_pump", "transfer_valve", "booster_pump",
                     "supply_valve", "return_pump"):
            if name in doc:
                kw[name] = doc[name]
        if "drain_valves" in doc:
            kw["drain_valves"] = tuple(doc["drain_valves"])
        if "demand_valves" in doc:
            kw["demand_valves"] = tuple(doc["demand_valves"])
        if "consumer_drains" in doc:
            kw["consumer_drains"] = tuple(
                (pair[0], pair[1]) for pair in doc["consumer_drains"]
            )
        if "interlocks" in doc:
            kw["interlocks"] = tuple(
                QualityInterlock(i["analyzer"], float(i["above"]), i["closes"])
                for i in doc["interlocks"]
            )
        for name in ("return_on_pct", "return_off_pct", "dry_run_trip_s"):
            if name in doc:
                kw[name] = float(doc[name])
        return cls(**kw)


@dataclass(frozen=True)
class ControlState:
    """Latch memory carried between scans."""

    inlet_open: bool = False
    refill_wanted: bool = False
    supply_on: bool = True
    return_running: bool = False


@dataclass(frozen=True)
class PublishedView:
    """Read-only snapshot of the clusters one scan acts on.

    Values come straight from the engine, so simulation overrides and spoofed
    thresholds are believed exactly the way the real controllers would.
    """

    clusters: dict[str, dict[str, Any]]
    demand_fraction: float = 1.0

    @classmethod
    def from_engine(cls, engine: VariableEngine, tags: Iterable[str],
                    demand_fraction: float) -> "PublishedView":
        clusters = {tag: engine.value(variable_path(tag)) for tag in tags}
        return cls(clusters=clusters, demand_fraction=demand_fraction)

    def level_class(self, tag: str) -> LevelClass:
        cluster = self.clusters[tag]
        return classify_level(effective_pv(cluster), AlarmBand.from_cluster(cluster))

    def signal(self, tag: str) -> float:
        return effective_pv(self.clusters[tag])

    def switch_on(self, tag: str) -> bool:
        return effective_pv(self.clusters[tag]) >= 0.5


def scan_tags(cfg: ControlConfig) -> tuple[str, ...]:
    """Every tag the controllers read."""
    tags = [cfg.rw_level, cfg.er_level, cfg.return_level]
    tags += [i.analyzer for i in cfg.interlocks]
    tags += [ls for ls, _ in cfg.consumer_drains]
    return tuple(dict.fromkeys(tags))


def _plc(tag: str) -> str:
    return f"PLC{tag_stage(tag)}"


def plc_scan(
    view: PublishedView, latches: ControlState, cfg: ControlConfig, tick: int
) -> tuple[list[ControlCommand], ControlState]:
    """One synchronized scan of all three stage controllers.

    Emits the desired state for every controlled device each scan (idempotent
    when nothing changed), so downstream comparison of commanded versus actual
    state needs no command history.
    """
    rw = view.level_class(cfg.rw_level)
    er = view.level_class(cfg.er_level)

    # Primary stage: refill from the utility line at low-low, stop high.
    inlet_open = latches.inlet_open
    if rw <= LevelClass.LL:
        inlet_open = True
    elif rw >= LevelClass.H:
        inlet_open = False

    # Inter-stage transfer wants the reservoir topped up between L and H, but
    # never draws the raw-water unit below its low-low band.
    refill = latches.refill_wanted
    if er <= LevelClass.L:
        refill = True
    elif er >= LevelClass.H:
        refill = False
    transfer_on = refill and rw >= LevelClass.L

    # Secondary stage: stop serving consumers on empty, resume once refilled.
    supply_on = latches.supply_on
    if er <= LevelClass.EMPTY:
        supply_on = False
    elif er >= LevelClass.L:
        supply_on = True

    # Return stage pump latch on the return tank level.
    return_pv = view.signal(cfg.return_level)
    returning = latches.return_running
    if return_pv >= cfg.return_on_pct:
        returning = True
    elif return_pv <= cfg.return_off_pct:
        returning = False

    def valve(tag: str, want_open: bool) -> ControlCommand:
        kind = CommandKind.OPEN if want_open else CommandKind.CLOSE
        return ControlCommand(tag, kind, _plc(tag), tick)

    def pump(tag: str, want_run: bool) -> ControlCommand:
        kind = CommandKind.START if want_run else CommandKind.STOP
        return ControlCommand(tag, kind, _plc(tag), tick)

    commands: list[ControlCommand] = [valve(cfg.inlet_valve, inlet_open)]
    commands += [valve(tag, False) for tag in cfg.drain_valves]
    commands.append(pump(cfg.transfer_pump, transfer_on))

    transfer_valve_open = transfer_on
    for interlock in cfg.interlocks:
        if interlock.closes == cfg.transfer_valve and (
            view.signal(interlock.analyzer) > interlock.above
        ):
            transfer_valve_open = False
    commands.append(valve(cfg.transfer_valve, transfer_valve_open))

    commands.append(pump(cfg.booster_pump, supply_on))
    commands.append(valve(cfg.supply_valve, supply_on))
    opening = view.demand_fraction if supply_on else 0.0
    opening = min(max(opening, 0.0), 1.0)
    for tag in cfg.demand_valves:
        commands.append(
            ControlCommand(tag, CommandKind.SET_OPENING, _plc(tag), tick, opening)
        )
    for ls_tag, drain_tag in cfg.consumer_drains:
        commands.append(valve(drain_tag, view.switch_on(ls_tag)))
    commands.append(pump(cfg.return_pump, returning))

    new_latches = ControlState(
        inlet_open=inlet_open,
        refill_wanted=refill,
        supply_on=supply_on,
        return_running=returning,
    )
    return commands, new_latches


def is_plc_source(issued_by: str) -> bool:
    return issued_by.startswith("PLC")


def apply_commands(
    state: PlantState,
    topology: PlantTopology,
    commands: Iterable[ControlCommand],
    auto_flags: dict[str, bool],
) -> list[ControlCommand]:
    """Mutate actuator ground truth; return the commands that took effect.

    Controller commands are filtered by the device's published Auto flag;
    manual commands are not. A tripped pump ignores Start until Reset.
    """
    applied: list[ControlCommand] = []
    for cmd in commands:
        if is_plc_source(cmd.issued_by) and not auto_flags.get(cmd.target, True):
            continue
        if cmd.target in state.valve_states:
            if cmd.kind is CommandKind.OPEN:
                state.valve_states[cmd.target] = ValveState.OPEN
                state.valve_openings[cmd.target] = 1.0
            elif cmd.kind is CommandKind.CLOSE:
                state.valve_states[cmd.target] = ValveState.CLOSED
                state.valve_openings[cmd.target] = 0.0
            elif cmd.kind is CommandKind.SET_OPENING and cmd.value is not None:
                opening = min(max(float(cmd.value), 0.0), 1.0)
                state.valve_openings[cmd.target] = opening
                state.valve_states[cmd.target] = (
                    ValveState.OPEN if opening > 0.0 else ValveState.CLOSED
                )
            else:
                continue
        elif cmd.target in state.pump_states:
            current = state.pump_states[cmd.target]
            if cmd.kind is CommandKind.START:
                if current is PumpState.DRY_RUN_TRIPPED:
                    continue  # latched until reset
                state.pump_states[cmd.target] = PumpState.RUNNING
            elif cmd.kind is CommandKind.STOP:
                if current is PumpState.DRY_RUN_TRIPPED:
                    continue
                state.pump_states[cmd.target] = PumpState.STOPPED
            elif cmd.kind is CommandKind.RESET:
                if current is PumpState.DRY_RUN_TRIPPED:
                    state.pump_states[cmd.target] = PumpState.STOPPED
            else:
                continue
        else:
            continue
        applied.append(cmd)
    return applied


def commands_from_writes(
    records: Iterable[WriteRecord], topology: PlantTopology, tick: int
) -> list[ControlCommand]:
    """Translate manual cluster writes into actuator commands.

    Only command-shaped fields on valve and pump clusters move hardware;
    everything else (simulation flags, thresholds, Auto itself) is plain data
    that stays in the cluster. Sources are taken at face value: the engine
    cannot tell an operator from an intruder.
    """
    from .clusters import path_tag

    commands: list[ControlCommand] = []
    for rec in records:
        tag = path_tag(rec.path)
        issued_by = rec.source
        if is_plc_source(issued_by) or issued_by == "PLANT":
            continue
        if tag in topology.valves():
            if rec.fields.get("Open_Command") is True:
                commands.append(ControlCommand(tag, CommandKind.OPEN, issued_by, tick))
            if rec.fields.get("Close_Command") is True:
                commands.append(ControlCommand(tag, CommandKind.CLOSE, issued_by, tick))
            if "Opening_Setpoint" in rec.fields:
                commands.append(
                    ControlCommand(tag, CommandKind.SET_OPENING, issued_by, tick,
                                   float(rec.fields["Opening_Setpoint"]))
                )
        elif tag in topology.pumps():
            if rec.fields.get("Start_Command") is True:
                commands.append(ControlCommand(tag, CommandKind.START, issued_by, tick))
            if rec.fields.get("Stop_Command") is True:
                commands.append(ControlCommand(tag, CommandKind.STOP, issued_by, tick))
            if rec.fields.get("Reset") is True:
                commands.append(ControlCommand(tag, CommandKind.RESET, issued_by, tick))
    return commands


# Below this level a source holds too little water to sustain a pump: the
# discrete balance starves a tank's outflow a fraction of a percent above
# true zero, so the relay must accept "effectively drained" rather than 0.0.
DRY_SOURCE_LEVEL_PCT = 0.5


def dry_run_monitor(
    topology: PlantTopology,
    state: PlantState,
    counters: dict[str, int],
    trip_ticks: int,
) -> dict[str, int]:
    """Device-level dry-run relay. Mutates pump states; returns new counters.

    A pump counts up while Running with every source unit it draws from
    effectively drained, and trips once the count reaches ``trip_ticks``.
    Any tick with water (or with the pump not running) resets the count.
    """
    out: dict[str, int] = {}
    for tag in topology.pumps():
        if state.pump_states[tag] is not PumpState.RUNNING:
            continue
        sources = topology.pump_source_units(tag)
        dry = bool(sources) and all(
            state.levels[u] <= DRY_SOURCE_LEVEL_PCT for u in sources
        )
        if not dry:
            continue
        count = counters.get(tag, 0) + 1
        if count >= trip_ticks:
            state.pump_states[tag] = PumpState.DRY_RUN_TRIPPED
        else:
            out[tag] = count
    return out
