"""Plant structure and ground-truth state for a three-stage water rig.

The modeled plant moves water through three stages: a primary grid that
receives utility water into two interconnected raw-water tanks, a secondary
grid with an elevated reservoir feeding consumer tanks through modulating
valves, and a return grid that recycles surplus back to the primary stage.

Tags follow the testbed convention ``stage_type_index`` (``1_LT_001``,
``2_MCV_101``). Tanks that share a ``level_tag`` behave as one hydraulic unit:
communicating vessels with a summed cross-section and a single level
coordinate, which is how two physical raw-water tanks sit behind one level
transmitter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

EXTERNAL = "EXTERNAL"  # utility supply outside the plant boundary
DRAIN = "DRAIN"        # waste sink outside the plant boundary
CONSUMER = "CONSUMER"  # metered delivery to consumers (leaves the loop)

_SINK_SENTINELS = (DRAIN, CONSUMER)

INSTRUMENT_KINDS = ("LT", "AIT", "FIT", "MV", "MCV", "P", "LS")
_ACTUATOR_KINDS = ("MV", "MCV", "P")


class ConfigError(ValueError):
    """Raised when a topology or scenario document fails validation."""


class ValveState(Enum):
    OPEN = "Open"
    CLOSED = "Closed"
    TRANSITIONING = "Transitioning"


class PumpState(Enum):
    RUNNING = "Running"
    STOPPED = "Stopped"
    DRY_RUN_TRIPPED = "DryRunTripped"


def tag_stage(tag: str) -> int:
    """Stage number encoded in a tag's first field (``2_MCV_101`` -> 2)."""
    head = tag.split("_", 1)[0]
    if not head.isdigit():
        raise ConfigError(f"tag {tag!r} does not start with a stage number")
    return int(head)


def tag_kind(tag: str) -> str:
    """Instrument type encoded in a tag's middle field (``2_MCV_101`` -> MCV)."""
    parts = tag.split("_")
    if len(parts) != 3 or parts[1] not in INSTRUMENT_KINDS:
        raise ConfigError(f"tag {tag!r} is not of the form stage_type_index")
    return parts[1]


@dataclass(frozen=True)
class TankSpec:
    """A physical tank. Levels are percentages of capacity.

    ``cross_section_area`` is expressed in liters per percentage point so the
    discrete balance works directly on the published level signal.
    """

    tag: str
    capacity_liters: float
    overflow_level_pct: float = 100.0
    level_tag: str = ""  # tanks sharing one value form a hydraulic unit

    def __post_init__(self) -> None:
        if self.capacity_liters <= 0:
            raise ConfigError(f"tank {self.tag}: capacity must be positive")
        if not self.level_tag:
            object.__setattr__(self, "level_tag", self.tag)

    @property
    def cross_section_area(self) -> float:
        return self.capacity_liters / 100.0


@dataclass(frozen=True)
class FlowPath:
    """A pipe segment carrying either zero flow or its nominal rate.

    ``gates`` names the valves and pumps that must all be open/running for
    water to move. ``source``/``sink`` are tank tags or the EXTERNAL / DRAIN /
    CONSUMER boundary sentinels. ``consumer_supply`` marks the lines whose
    summed flow is the plant's delivery-to-consumers signal.
    """

    path_id: str
    source: str
    sink: str
    gates: tuple[str, ...] = ()
    nominal_rate_lpm: float = 0.0
    fit_tag: str | None = None
    consumer_supply: bool = False

    def __post_init__(self) -> None:
        if self.nominal_rate_lpm < 0:
            raise ConfigError(f"path {self.path_id}: negative nominal rate")
        if self.source == self.sink:
            raise ConfigError(f"path {self.path_id}: source equals sink")


@dataclass(frozen=True)
class Instrument:
    """A tagged field device: sensor (LT/AIT/FIT/LS) or actuator (MV/MCV/P)."""

    tag: str
    kind: str
    measures: tuple[str, ...] = ()     # tank tags, for LT and LS
    on_path: str | None = None         # path id, for FIT
    baseline_value: float = 0.0        # free-running signal value, for AIT
    switch_high_pct: float = 80.0      # LS latches on at/above this level
    switch_low_pct: float = 20.0       # ... and off at/below this one
    travel_time_ticks: int = 0         # MV/MCV ticks spent Transitioning

    def __post_init__(self) -> None:
        if self.kind not in INSTRUMENT_KINDS:
            raise ConfigError(f"instrument {self.tag}: unknown kind {self.kind!r}")
        if self.kind != tag_kind(self.tag):
            raise ConfigError(
                f"instrument {self.tag}: tag type field does not match kind {self.kind}"
            )
        if self.kind == "LS" and not self.switch_low_pct < self.switch_high_pct:
            raise ConfigError(f"instrument {self.tag}: switch deadband is inverted")


@dataclass(frozen=True)
class PlantTopology:
    """Validated, immutable description of tanks, pipes and field devices."""

    tanks: dict[str, TankSpec]
    paths: dict[str, FlowPath]
    instruments: dict[str, Instrument]

    def level_units(self) -> dict[str, tuple[str, ...]]:
        """Hydraulic units: level tag -> member tank tags."""
        units: dict[str, list[str]] = {}
        for tank in self.tanks.values():
            units.setdefault(tank.level_tag, []).append(tank.tag)
        return {k: tuple(v) for k, v in units.items()}

    def unit_area(self, level_tag: str) -> float:
        """Combined cross-section of a hydraulic unit, liters per pct point."""
        area = sum(
            t.cross_section_area for t in self.tanks.values() if t.level_tag == level_tag
        )
        if area == 0.0:
            raise ConfigError(f"unknown level tag {level_tag!r}")
        return area

    def unit_overflow(self, level_tag: str) -> float:
        return min(
            t.overflow_level_pct for t in self.tanks.values() if t.level_tag == level_tag
        )

    def level_tag_of(self, tank_tag: str) -> str:
        return self.tanks[tank_tag].level_tag

    def actuators(self) -> dict[str, Instrument]:
        return {t: i for t, i in self.instruments.items() if i.kind in _ACTUATOR_KINDS}

    def valves(self) -> dict[str, Instrument]:
        return {t: i for t, i in self.instruments.items() if i.kind in ("MV", "MCV")}

    def pumps(self) -> dict[str, Instrument]:
        return {t: i for t, i in self.instruments.items() if i.kind == "P"}

    def pump_source_units(self, pump_tag: str) -> tuple[str, ...]:
        """Level tags of the tanks a pump draws from (dry-run supervision)."""
        units = []
        for p in self.paths.values():
            if pump_tag in p.gates and p.source in self.tanks:
                lt = self.level_tag_of(p.source)
                if lt not in units:
                    units.append(lt)
        return tuple(units)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def load_topology(doc: dict | str | Path) -> PlantTopology:
    """Build a PlantTopology from a parsed JSON document (or a file path).

    Every cross-reference is checked here so later stages can assume a
    consistent plant: path endpoints resolve, gates name actuators, FIT tags
    name flow instruments, and tanks inside one hydraulic unit agree on their
    overflow threshold.
    """
    if isinstance(doc, (str, Path)):
        with open(doc, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("topology document must be a JSON object")

    tanks: dict[str, TankSpec] = {}
    for entry in doc.get("tanks", []):
        spec = TankSpec(
            tag=entry["tag"],
            capacity_liters=float(entry["capacity_liters"]),
            overflow_level_pct=float(entry.get("overflow_level_pct", 100.0)),
            level_tag=entry.get("level_tag", ""),
        )
        _require(spec.tag not in tanks, f"duplicate tank tag {spec.tag}")
        tanks[spec.tag] = spec

    instruments: dict[str, Instrument] = {}
    for entry in doc.get("instruments", []):
        inst = Instrument(
            tag=entry["tag"],
            kind=entry["kind"],
            measures=tuple(entry.get("measures", ())),
            on_path=entry.get("on_path"),
            baseline_value=float(entry.get("baseline_value", 0.0)),
            switch_high_pct=float(entry.get("switch_high_pct", 80.0)),
            switch_low_pct=float(entry.get("switch_low_pct", 20.0)),
            travel_time_ticks=int(entry.get("travel_time_ticks", 0)),
        )
        _require(inst.tag not in instruments, f"duplicate instrument tag {inst.tag}")
        instruments[inst.tag] = inst

    paths: dict[str, FlowPath] = {}
    for entry in doc.get("paths", []):
        path = FlowPath(
            path_id=entry["path_id"],
            source=entry["source"],
            sink=entry["sink"],
            gates=tuple(entry.get("gates", ())),
            nominal_rate_lpm=float(entry["nominal_rate_lpm"]),
            fit_tag=entry.get("fit_tag"),
            consumer_supply=bool(entry.get("consumer_supply", False)),
        )
        _require(path.path_id not in paths, f"duplicate path id {path.path_id}")
        paths[path.path_id] = path

    _require(bool(tanks), "topology has no tanks")

    for path in paths.values():
        _require(
            path.source == EXTERNAL or path.source in tanks,
            f"path {path.path_id}: unknown source {path.source!r}",
        )
        _require(
            path.sink in _SINK_SENTINELS or path.sink in tanks,
            f"path {path.path_id}: unknown sink {path.sink!r}",
        )
        for gate in path.gates:
            _require(gate in instruments, f"path {path.path_id}: unknown gate {gate!r}")
            _require(
                instruments[gate].kind in _ACTUATOR_KINDS,
                f"path {path.path_id}: gate {gate} is not a valve or pump",
            )
        if path.fit_tag is not None:
            _require(
                path.fit_tag in instruments and instruments[path.fit_tag].kind == "FIT",
                f"path {path.path_id}: fit_tag {path.fit_tag!r} is not a FIT",
            )

    for inst in instruments.values():
        for tank_tag in inst.measures:
            _require(tank_tag in tanks, f"instrument {inst.tag}: unknown tank {tank_tag}")
        if inst.on_path is not None:
            _require(inst.on_path in paths, f"instrument {inst.tag}: unknown path {inst.on_path}")

    topo = PlantTopology(tanks=tanks, paths=paths, instruments=instruments)
    for level_tag, members in topo.level_units().items():
        thresholds = {tanks[m].overflow_level_pct for m in members}
        _require(
            len(thresholds) == 1,
            f"hydraulic unit {level_tag}: members disagree on overflow threshold",
        )
    for inst in instruments.values():
        if inst.kind == "LT":
            _require(
                inst.measures != () and all(tanks[m].level_tag == inst.tag for m in inst.measures),
                f"level transmitter {inst.tag} must measure the tanks declaring it as level_tag",
            )
    return topo


@dataclass
class PlantState:
    """Ground truth at one tick. The twin's private reality.

    Only the engine's published clusters are visible to controllers,
    attackers and detectors; this object is what actually happened.
    """

    tick: int
    time_s: float
    levels: dict[str, float]                 # level tag -> percent of capacity
    valve_states: dict[str, ValveState]
    valve_openings: dict[str, float]         # 0..1; plain MVs are 0 or 1
    pump_states: dict[str, PumpState]
    flows: dict[str, float]                  # path id -> L/min currently moving
    analyzer_values: dict[str, float]        # AIT tag -> signal value
    consumer_totalizer_liters: float = 0.0   # delivered out of the loop
    spilled_liters: float = 0.0              # lost over tank overflow lines
    drain_totalizer_liters: float = 0.0      # sent to waste drains
    external_inflow_liters: float = 0.0      # drawn from the utility supply
    switch_states: dict[str, bool] = field(default_factory=dict)  # LS latches

    def copy(self) -> "PlantState":
        return PlantState(
            tick=self.tick,
            time_s=self.time_s,
            levels=dict(self.levels),
            valve_states=dict(self.valve_states),
            valve_openings=dict(self.valve_openings),
            pump_states=dict(self.pump_states),
            flows=dict(self.flows),
            analyzer_values=dict(self.analyzer_values),
            consumer_totalizer_liters=self.consumer_totalizer_liters,
            spilled_liters=self.spilled_liters,
            drain_totalizer_liters=self.drain_totalizer_liters,
            external_inflow_liters=self.external_inflow_liters,
            switch_states=dict(self.switch_states),
        )

    def stored_liters(self, topology: PlantTopology) -> float:
        """Total water currently held in tanks."""
        return sum(
            self.levels[tag] * topology.unit_area(tag)
            for tag in topology.level_units()
        )


def initial_state(
    topology: PlantTopology,
    initial_levels: dict[str, float] | None = None,
) -> PlantState:
    """Quiescent state: valves closed, pumps stopped, no flow anywhere.

    ``initial_levels`` is keyed by level tag; units left out start empty.
    Values outside [0, overflow] are configuration errors.
    """
    initial_levels = dict(initial_levels or {})
    units = topology.level_units()
    for tag in initial_levels:
        if tag not in units:
            raise ConfigError(f"initial level for unknown level tag {tag!r}")
    levels: dict[str, float] = {}
    for tag in units:
        value = float(initial_levels.get(tag, 0.0))
        limit = topology.unit_overflow(tag)
        if not 0.0 <= value <= limit:
            raise ConfigError(
                f"initial level {value} for {tag} outside [0, {limit}]"
            )
        levels[tag] = value

    valve_states = {t: ValveState.CLOSED for t in topology.valves()}
    valve_openings = {t: 0.0 for t in topology.valves()}
    pump_states = {t: PumpState.STOPPED for t in topology.pumps()}
    analyzers = {
        t: i.baseline_value for t, i in topology.instruments.items() if i.kind == "AIT"
    }
    switches: dict[str, bool] = {}
    for tag, inst in topology.instruments.items():
        if inst.kind == "LS" and inst.measures:
            level = levels[topology.level_tag_of(inst.measures[0])]
            switches[tag] = level >= inst.switch_high_pct
    return PlantState(
        tick=0,
        time_s=0.0,
        levels=levels,
        valve_states=valve_states,
        valve_openings=valve_openings,
        pump_states=pump_states,
        flows={p: 0.0 for p in topology.paths},
        analyzer_values=analyzers,
        switch_states=switches,
    )
