"""Scenario runner: wires plant, engine, controllers, detector and attacks.

One call to :func:`run` plays a scenario tick by tick and returns the full
log, the detector's violation history and one outcome record per scripted
attack. The loop is strictly ordered so identical inputs give identical
logs, byte for byte:

1. ground truth advances one step (skipped on tick 0, so the first logged
   row is the initial condition),
2. the plant publishes its process values and the runner its clock,
3. scripted attack writes commit; launch conditions are checked against
   the published values of this tick, before the attack's own writes,
4. the queued manual writes become actuator commands,
5. the controllers scan the published values and emit desired states,
6. commands apply to ground truth; controller commands gated by the
   published Auto flag, manual commands last so they win a same-tick tie,
7. the dry-run relay counts starved pumps,
8. the detector observes the published snapshot plus the controller
   commands, and the violation summary is republished,
9. the row is logged.

Networked clients write through the same engine whenever their frames
arrive; anything landing between this tick's drain and the next is picked
up by the next scan, exactly like a late packet on a real control network.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .attacks import (
    ActionScheduler,
    AttackOutcome,
    AttackSpec,
    eval_predicate,
    load_spec,
    predicate_paths,
)
from .clusters import (
    VIOLATIONS_PATH,
    cluster_kind,
    effective_pv,
    plant_updates,
    seed_cluster,
    variable_path,
)
from .configs import (
    default_control,
    default_topology,
    load_invariants_doc,
    load_scenario_doc,
)
from .control import (
    ControlConfig,
    ControlState,
    PublishedView,
    apply_commands,
    commands_from_writes,
    dry_run_monitor,
    plc_scan,
    scan_tags,
)
from .detector import Detector, Invariant, Violation, builtin_invariants, load_invariants
from .engine import VariableEngine
from .physics import StepConfig, compute_flows, step as physics_step
from .plant import ConfigError, PlantState, PlantTopology, initial_state, load_topology
from .protocol import ProtocolServer

CLOCK_PATH = "RUNNER/clock"


@dataclass(frozen=True)
class DemandStep:
    """Consumer demand fraction that takes effect at ``start_s``."""

    start_s: float
    fraction: float


@dataclass(frozen=True)
class AttackRun:
    """One scripted attack inside a scenario."""

    spec: AttackSpec
    launch_offset_s: float
    lenient: bool = False


@dataclass(frozen=True)
class Scenario:
    """Everything one reproducible run needs."""

    name: str
    topology: PlantTopology
    control: ControlConfig
    invariants: tuple[Invariant, ...]
    initial_levels: Mapping[str, float]
    duration_s: float
    step: StepConfig
    demand: tuple[DemandStep, ...]
    attacks: tuple[AttackRun, ...] = ()

    def demand_fraction(self, time_s: float) -> float:
        current = self.demand[0].fraction
        for d in self.demand:
            if d.start_s <= time_s + 1e-9:
                current = d.fraction
            else:
                break
        return current

    def without_attacks(self) -> "Scenario":
        return dataclasses.replace(self, attacks=())

    @property
    def n_ticks(self) -> int:
        return round(self.duration_s / self.step.plant_dt_s)

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "Scenario":
        name = str(doc.get("name", "unnamed"))

        topo_ref = doc.get("topology", "default")
        if topo_ref == "default":
            topology = default_topology()
        elif isinstance(topo_ref, Mapping):
            topology = load_topology(topo_ref)
        else:
            topology = load_topology(_read_json(topo_ref))

        control_ref = doc.get("control", "default")
        if control_ref == "default":
            control = default_control()
        elif isinstance(control_ref, Mapping):
            control = ControlConfig.from_doc(dict(control_ref))
        else:
            control = ControlConfig.from_doc(_read_json(control_ref))

        inv_ref = doc.get("invariants", "default")
        if inv_ref == "default":
            invariants = builtin_invariants(topology)
        elif isinstance(inv_ref, list):
            invariants = load_invariants(inv_ref, topology)
        else:
            invariants = load_invariants(_read_json_list(inv_ref), topology)

        try:
            duration_s = float(doc["duration_s"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"scenario {name}: bad duration_s") from exc
        if duration_s <= 0:
            raise ConfigError(f"scenario {name}: duration_s must be positive")

        step_doc = dict(doc.get("step", {}))
        try:
            step = StepConfig(
                dt_s=float(step_doc.get("dt_s", 1.0)),
                time_scale=float(step_doc.get("time_scale", 1.0)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenario {name}: bad step settings: {exc}") from exc

        demand_doc = doc.get("demand") or [{"start_s": 0.0, "fraction": 1.0}]
        demand: list[DemandStep] = []
        for entry in demand_doc:
            d = DemandStep(float(entry["start_s"]), float(entry["fraction"]))
            if not 0.0 <= d.fraction <= 1.0:
                raise ConfigError(f"scenario {name}: demand fraction {d.fraction}")
            if demand and d.start_s < demand[-1].start_s:
                raise ConfigError(f"scenario {name}: demand steps out of order")
            demand.append(d)
        if demand[0].start_s != 0.0:
            raise ConfigError(f"scenario {name}: first demand step must start at 0")

        attacks: list[AttackRun] = []
        for entry in doc.get("attacks", []):
            spec_ref = entry["spec"]
            spec = spec_ref if isinstance(spec_ref, AttackSpec) else load_spec(spec_ref)
            launch = float(entry.get("launch_offset_s", 0.0))
            if launch < 0:
                raise ConfigError(f"scenario {name}: negative launch offset")
            if launch + spec.last_action_time_s() > duration_s:
                raise ConfigError(
                    f"scenario {name}: attack {spec.id} schedules a write at "
                    f"{launch + spec.last_action_time_s()}s, past the end of "
                    f"the run ({duration_s}s)"
                )
            attacks.append(AttackRun(spec, launch, bool(entry.get("lenient", False))))

        return cls(
            name=name,
            topology=topology,
            control=control,
            invariants=invariants,
            initial_levels=dict(doc.get("initial_levels", {})),
            duration_s=duration_s,
            step=step,
            demand=tuple(demand),
            attacks=tuple(attacks),
        )


def _read_json(ref: Any) -> dict[str, Any]:
    with open(str(ref), "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"{ref}: expected a JSON object")
    return doc


def _read_json_list(ref: Any) -> list[dict[str, Any]]:
    if str(ref) == "builtin":
        return load_invariants_doc()
    with open(str(ref), "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise ConfigError(f"{ref}: expected a JSON array")
    return doc


def load_scenario(name_or_path: str) -> Scenario:
    return Scenario.from_doc(load_scenario_doc(name_or_path))


# ---------------------------------------------------------------------------
# Run log


_STRING_COLUMNS = ("commands", "violations")
_STRING_PREFIXES = ("state:", "pump:")


class ScenarioLog:
    """Column-named rows, one per tick, with fixed-format CSV round-trip."""

    def __init__(self, columns: Iterable[str]):
        self.columns: list[str] = list(columns)
        self._index = {c: i for i, c in enumerate(self.columns)}
        if len(self._index) != len(self.columns):
            raise ConfigError("log columns must be unique")
        self.rows: list[list[Any]] = []

    def append(self, values: Mapping[str, Any]) -> None:
        missing = [c for c in self.columns if c not in values]
        if missing:
            raise ConfigError(f"log row missing columns: {missing}")
        self.rows.append([values[c] for c in self.columns])

    def column(self, name: str) -> list[Any]:
        i = self._index[name]
        return [row[i] for row in self.rows]

    def value(self, name: str, row: int) -> Any:
        return self.rows[row][self._index[name]]

    def row_dict(self, row: int) -> dict[str, Any]:
        return dict(zip(self.columns, self.rows[row]))

    def __len__(self) -> int:
        return len(self.rows)

    @staticmethod
    def _format(name: str, value: Any) -> str:
        if name == "tick":
            return str(int(value))
        if name in _STRING_COLUMNS or name.startswith(_STRING_PREFIXES):
            return str(value)
        return f"{float(value):.6f}"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow(
                self._format(c, v) for c, v in zip(self.columns, row)
            )
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text_or_path: str | Path) -> "ScenarioLog":
        if not str(text_or_path):
            raise ConfigError("empty CSV")
        if isinstance(text_or_path, Path) or "\n" not in str(text_or_path):
            text = Path(text_or_path).read_text(encoding="utf-8")
        else:
            text = str(text_or_path)
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError("empty CSV") from None
        log = cls(header)
        for raw in reader:
            if len(raw) != len(header):
                raise ConfigError("ragged CSV row")
            values: dict[str, Any] = {}
            for name, cell in zip(header, raw):
                if name == "tick":
                    values[name] = int(cell)
                elif name in _STRING_COLUMNS or name.startswith(_STRING_PREFIXES):
                    values[name] = cell
                else:
                    values[name] = float(cell)
            log.append(values)
        return log


def log_columns(topology: PlantTopology) -> list[str]:
    def tags(kind: str) -> list[str]:
        return sorted(t for t, i in topology.instruments.items() if i.kind == kind)

    valves = sorted(topology.valves())
    cols = ["time_s", "tick"]
    cols += [f"truth:{t}" for t in sorted(topology.level_units())]
    cols += [f"pub:{t}" for t in tags("LT")]
    cols += [f"state:{t}" for t in valves]
    cols += [f"opening:{t}" for t in valves]
    cols += [f"pump:{t}" for t in sorted(topology.pumps())]
    cols += [f"ait:{t}" for t in tags("AIT")]
    cols += [f"fit:{t}" for t in tags("FIT")]
    cols += [f"ls:{t}" for t in tags("LS")]
    cols += [f"flow:{p}" for p in sorted(topology.paths)]
    cols += [
        "consumer_supply_lpm",
        "consumer_totalizer_l",
        "spilled_l",
        "drained_l",
        "external_in_l",
        "commands",
        "violations",
    ]
    return cols


# ---------------------------------------------------------------------------
# The run itself


@dataclass
class RunResult:
    scenario: Scenario
    log: ScenarioLog
    violations: list[Violation]
    outcomes: list[AttackOutcome]
    final_state: PlantState

    @property
    def violation_ids(self) -> list[str]:
        seen: list[str] = []
        for v in self.violations:
            if v.invariant_id not in seen:
                seen.append(v.invariant_id)
        return seen


@dataclass
class _LiveAttack:
    plan: AttackRun
    scheduler: ActionScheduler
    outcome: AttackOutcome
    launched: bool = False
    launch_tick: int = -1


def build_engine(topology: PlantTopology) -> VariableEngine:
    """Engine preloaded with one cluster per instrument plus runner paths."""
    engine = VariableEngine()
    for tag, inst in topology.instruments.items():
        engine.create(variable_path(tag), seed_cluster(inst), kind=cluster_kind(inst))
    engine.create(CLOCK_PATH, {"time_s": 0.0, "tick": 0.0})
    engine.create(
        VIOLATIONS_PATH, {"count": 0.0, "open": 0.0, "ids": "", "latest": ""}
    )
    return engine


def _preflight(scenario: Scenario, engine: VariableEngine) -> None:
    known = set(engine.paths())
    for entry in scenario.attacks:
        spec = entry.spec
        wanted = set(spec.domain)
        for condition in (spec.so, spec.se, spec.intent_condition):
            wanted |= predicate_paths(condition)
        missing = sorted(wanted - known)
        if missing:
            raise ConfigError(
                f"attack {spec.id} references unknown paths: {missing}"
            )


def run(
    scenario: Scenario,
    *,
    port: int | None = None,
    pace_s: float | None = None,
    on_tick: Callable[[int, float, VariableEngine], None] | None = None,
    on_server: Callable[[ProtocolServer], None] | None = None,
) -> RunResult:
    """Play the scenario to the end and return everything it produced.

    ``port`` starts the network protocol on that port (0 picks a free one
    and ``on_server`` tells the caller which) for the duration of the run.
    ``pace_s`` holds each tick to that many wall seconds so clients can
    follow along; None lets the loop free-run.
    """
    topology = scenario.topology
    cfg = scenario.control
    step_cfg = scenario.step
    dt = step_cfg.plant_dt_s

    state = initial_state(topology, dict(scenario.initial_levels))
    engine = build_engine(topology)
    _preflight(scenario, engine)

    detector = Detector(topology, scenario.invariants, step_cfg)
    latches = ControlState()
    dry_counters: dict[str, int] = {}
    trip_ticks = max(1, round(cfg.dry_run_trip_s / dt))
    tags = scan_tags(cfg)
    columns = log_columns(topology)
    log = ScenarioLog(columns)

    live: list[_LiveAttack] = [
        _LiveAttack(
            plan=entry,
            scheduler=ActionScheduler(entry.spec, entry.launch_offset_s),
            outcome=AttackOutcome(
                spec_id=entry.spec.id,
                so_held_at_launch=False,
                executed=False,
                se_reached=False,
                se_reached_at=None,
                intent_held_at_se=False,
            ),
        )
        for entry in scenario.attacks
    ]

    def reader(path: str) -> dict[str, Any]:
        return engine.value(path)

    server = None
    if port is not None:
        server = ProtocolServer(engine, port=port).start()
        if on_server is not None:
            on_server(server)

    wall_start = time.monotonic()
    try:
        for tick in range(scenario.n_ticks + 1):
            if tick > 0:
                state = physics_step(topology, state, step_cfg)

            for path, fields in plant_updates(topology, state).items():
                engine.write(path, fields, source="PLANT")
            engine.write(
                CLOCK_PATH,
                {"time_s": state.time_s, "tick": float(tick)},
                source="RUNNER",
            )

            for attack in live:
                offset = attack.plan.launch_offset_s
                if not attack.launched and state.time_s + 1e-9 >= offset:
                    attack.launched = True
                    attack.launch_tick = tick
                    held = bool(eval_predicate(attack.plan.spec.so, reader))
                    attack.outcome.so_held_at_launch = held
                    attack.outcome.executed = held or attack.plan.lenient
                if attack.launched and attack.outcome.executed:
                    for action in attack.scheduler.due(state.time_s, dt):
                        engine.write(
                            action.path,
                            dict(action.fields),
                            source=f"attacker:{attack.plan.spec.id}",
                        )

            manual = commands_from_writes(engine.drain_writes(), topology, tick)
            view = PublishedView.from_engine(
                engine, tags, scenario.demand_fraction(state.time_s)
            )
            plc_commands, latches = plc_scan(view, latches, cfg, tick)

            auto_flags = {
                t: bool(engine.value(variable_path(t)).get("Auto", True))
                for t in list(topology.valves()) + list(topology.pumps())
            }
            applied = apply_commands(
                state, topology, plc_commands + manual, auto_flags
            )
            dry_counters = dry_run_monitor(topology, state, dry_counters, trip_ticks)
            state.flows = compute_flows(topology, state)

            clusters = {
                tag: engine.value(variable_path(tag)) for tag in topology.instruments
            }
            detector.observe(tick, clusters, plc_commands)
            open_v = detector.open_violations
            engine.write(
                VIOLATIONS_PATH,
                {
                    "count": float(len(detector.violations)),
                    "open": float(len(open_v)),
                    "ids": ";".join(v.invariant_id for v in open_v),
                    "latest": (
                        detector.violations[-1].invariant_id
                        if detector.violations
                        else ""
                    ),
                },
                source="DETECTOR",
            )

            for attack in live:
                if not (attack.launched and attack.outcome.executed):
                    continue
                if not attack.outcome.se_reached and bool(
                    eval_predicate(attack.plan.spec.se, reader)
                ):
                    attack.outcome.se_reached = True
                    attack.outcome.se_reached_at = state.time_s
                    attack.outcome.intent_held_at_se = bool(
                        eval_predicate(attack.plan.spec.intent_condition, reader)
                    )

            log.append(
                _log_row(topology, state, tick, clusters, applied, open_v)
            )

            if on_tick is not None:
                on_tick(tick, state.time_s, engine)
            if pace_s is not None and tick < scenario.n_ticks:
                deadline = wall_start + (tick + 1) * pace_s
                pause = deadline - time.monotonic()
                if pause > 0:
                    time.sleep(pause)
    finally:
        if server is not None:
            server.stop()

    for attack in live:
        seen = []
        for v in detector.violations:
            if v.first_tick >= attack.launch_tick >= 0:
                if v.invariant_id not in seen:
                    seen.append(v.invariant_id)
        attack.outcome.detector_alarms = seen

    return RunResult(
        scenario=scenario,
        log=log,
        violations=list(detector.violations),
        outcomes=[a.outcome for a in live],
        final_state=state,
    )


def _log_row(
    topology: PlantTopology,
    state: PlantState,
    tick: int,
    clusters: Mapping[str, Mapping[str, Any]],
    applied: Iterable[Any],
    open_violations: Iterable[Violation],
) -> dict[str, Any]:
    row: dict[str, Any] = {"time_s": state.time_s, "tick": tick}
    for lt in topology.level_units():
        row[f"truth:{lt}"] = state.levels[lt]
    for tag, inst in topology.instruments.items():
        cluster = clusters[tag]
        if inst.kind == "LT":
            row[f"pub:{tag}"] = effective_pv(cluster)
        elif inst.kind == "AIT":
            row[f"ait:{tag}"] = effective_pv(cluster)
        elif inst.kind == "FIT":
            row[f"fit:{tag}"] = float(cluster.get("PV", 0.0))
        elif inst.kind == "LS":
            row[f"ls:{tag}"] = float(cluster.get("PV", 0.0))
    for tag in topology.valves():
        row[f"state:{tag}"] = state.valve_states[tag].value
        row[f"opening:{tag}"] = state.valve_openings[tag]
    for tag in topology.pumps():
        row[f"pump:{tag}"] = state.pump_states[tag].value
    supply = 0.0
    for path_id, path in topology.paths.items():
        row[f"flow:{path_id}"] = state.flows[path_id]
        if path.consumer_supply:
            supply += state.flows[path_id]
    row["consumer_supply_lpm"] = supply
    row["consumer_totalizer_l"] = state.consumer_totalizer_liters
    row["spilled_l"] = state.spilled_liters
    row["drained_l"] = state.drain_totalizer_liters
    row["external_in_l"] = state.external_inflow_liters
    row["commands"] = ";".join(c.describe() for c in applied)
    row["violations"] = ";".join(v.invariant_id for v in open_violations)
    return row
