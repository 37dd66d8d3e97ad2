"""Attack specification, scheduling, live injection, and impact assessment.

An attack is a declarative document, not code: a six-part record naming what
the attacker wants (``intent``), where they could reach (``domain``), what
they actually touch (``points``), the timed write sequence that does it
(``procedure``), and the plant conditions framing the attempt (``so`` before,
``se`` after). The runner executes these documents in-process for repeatable
replays; ``run_attack`` drives the same document over the network against a
live engine, exactly as any other anonymous client could.

Start/end/intent conditions use a small JSON predicate grammar evaluated
over published cluster values (never ground truth): leaves ``const``,
``pv``, ``field``, ``class``; operators ``and or not == != < <= > >=
+ - * abs approx``. ``approx`` takes value, target, tolerance.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .clusters import VIOLATIONS_PATH, effective_pv
from .control import AlarmBand, classify_level

Reader = Callable[[str], Mapping[str, Any]]

_PREDICATE_OPS = {"and", "or", "not", "==", "!=", "<", "<=", ">", ">=",
                  "+", "-", "*", "abs", "approx"}
_PREDICATE_LEAVES = ("const", "pv", "field", "class")


class AttackSpecError(ValueError):
    pass


@dataclass(frozen=True)
class TimedAction:
    """One write in a procedure, timed in plant seconds after launch."""

    time_s: float
    path: str
    fields: Mapping[str, Any]
    repeat_interval_s: float | None = None  # None fires once; 0.0 every tick
    until_s: float | None = None

    def as_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "time_s": self.time_s,
            "path": self.path,
            "fields": dict(self.fields),
        }
        if self.repeat_interval_s is not None:
            doc["repeat_interval_s"] = self.repeat_interval_s
        if self.until_s is not None:
            doc["until_s"] = self.until_s
        return doc


@dataclass(frozen=True)
class AttackSpec:
    """The six-part attack record plus bookkeeping fields."""

    id: str
    name: str
    intent: str
    intent_condition: Mapping[str, Any]
    domain: tuple[str, ...]
    points: tuple[str, ...]
    procedure: tuple[TimedAction, ...]
    so: Mapping[str, Any]
    se: Mapping[str, Any]
    note: str = ""

    def __post_init__(self) -> None:
        if not self.procedure:
            raise AttackSpecError(f"{self.id}: procedure must not be empty")
        missing = set(self.points) - set(self.domain)
        if missing:
            raise AttackSpecError(
                f"{self.id}: points outside declared domain: {sorted(missing)}"
            )
        for action in self.procedure:
            if action.path not in self.points:
                raise AttackSpecError(
                    f"{self.id}: action writes {action.path}, not a declared point"
                )
        for label, condition in (
            ("so", self.so), ("se", self.se), ("intent", self.intent_condition)
        ):
            validate_predicate(condition, f"{self.id}.{label}")

    @property
    def single_point(self) -> bool:
        return len(set(self.points)) == 1

    def last_action_time_s(self) -> float:
        return max(a.time_s for a in self.procedure)

    def as_doc(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "intent": self.intent,
            "intent_condition": _plain(self.intent_condition),
            "domain": list(self.domain),
            "points": list(self.points),
            "procedure": [a.as_doc() for a in self.procedure],
            "so": _plain(self.so),
            "se": _plain(self.se),
            "note": self.note,
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "AttackSpec":
        try:
            procedure = tuple(
                TimedAction(
                    time_s=float(a["time_s"]),
                    path=str(a["path"]),
                    fields=dict(a["fields"]),
                    repeat_interval_s=(
                        None if a.get("repeat_interval_s") is None
                        else float(a["repeat_interval_s"])
                    ),
                    until_s=(
                        None if a.get("until_s") is None else float(a["until_s"])
                    ),
                )
                for a in doc["procedure"]
            )
            return cls(
                id=str(doc["id"]),
                name=str(doc.get("name", doc["id"])),
                intent=str(doc.get("intent", "")),
                intent_condition=doc.get("intent_condition", doc["se"]),
                domain=tuple(doc["domain"]),
                points=tuple(doc["points"]),
                procedure=procedure,
                so=doc["so"],
                se=doc["se"],
                note=str(doc.get("note", "")),
            )
        except KeyError as exc:
            raise AttackSpecError(f"attack document missing field: {exc}") from exc


def _plain(node: Any) -> Any:
    if isinstance(node, Mapping):
        return {k: _plain(v) for k, v in node.items()}
    if isinstance(node, (list, tuple)):
        return [_plain(v) for v in node]
    return node


def validate_predicate(node: Any, where: str) -> None:
    """Reject malformed predicate trees up front, never mid-run."""
    if not isinstance(node, Mapping):
        raise AttackSpecError(f"{where}: predicate node must be an object")
    if "op" in node:
        op = node["op"]
        if op not in _PREDICATE_OPS:
            raise AttackSpecError(f"{where}: unknown predicate op {op!r}")
        args = node.get("args")
        if not isinstance(args, list) or not args:
            raise AttackSpecError(f"{where}: op {op!r} needs an args list")
        if op in ("not", "abs") and len(args) != 1:
            raise AttackSpecError(f"{where}: op {op!r} takes one argument")
        if op == "approx" and len(args) != 3:
            raise AttackSpecError(f"{where}: approx takes value, target, tolerance")
        if op in ("==", "!=", "<", "<=", ">", ">=", "-") and len(args) != 2:
            raise AttackSpecError(f"{where}: op {op!r} takes two arguments")
        for arg in args:
            validate_predicate(arg, where)
        return
    for key in _PREDICATE_LEAVES:
        if key in node:
            if key == "field":
                ref = node[key]
                if not (isinstance(ref, Sequence) and len(ref) == 2):
                    raise AttackSpecError(f"{where}: field leaf needs [path, name]")
            return
    raise AttackSpecError(f"{where}: unrecognized predicate node {node!r}")


def predicate_paths(node: Any) -> set[str]:
    """Every engine path a predicate reads."""
    paths: set[str] = set()
    if isinstance(node, Mapping):
        if "pv" in node:
            paths.add(node["pv"])
        elif "class" in node:
            paths.add(node["class"])
        elif "field" in node:
            paths.add(node["field"][0])
        for arg in node.get("args", []):
            paths |= predicate_paths(arg)
    return paths


def eval_predicate(node: Mapping[str, Any], reader: Reader) -> bool:
    """Evaluate a predicate against live published values.

    Unreadable paths make the affected comparison false rather than raising:
    an attacker probing a dead address learns "condition not met".
    """
    return _eval(node, reader) is True


def _eval(node: Mapping[str, Any], reader: Reader) -> Any:
    if "op" in node:
        op = node["op"]
        args = node["args"]
        if op == "and":
            return all(_eval(a, reader) is True for a in args)
        if op == "or":
            return any(_eval(a, reader) is True for a in args)
        if op == "not":
            inner = _eval(args[0], reader)
            return None if inner is None else inner is not True
        values = [_eval(a, reader) for a in args]
        if any(v is None for v in values):
            return None
        if op == "approx":
            value, target, tol = values
            return abs(float(value) - float(target)) <= float(tol)
        if op == "abs":
            return abs(values[0])
        if op == "+":
            return values[0] + values[1]
        if op == "-":
            return values[0] - values[1]
        if op == "*":
            return values[0] * values[1]
        a, b = values
        if op == "==":
            return a == b
        if op == "!=":
            return a != b
        if op == "<":
            return a < b
        if op == "<=":
            return a <= b
        if op == ">":
            return a > b
        return a >= b
    try:
        if "const" in node:
            return node["const"]
        if "pv" in node:
            return effective_pv(reader(node["pv"]))
        if "class" in node:
            cluster = reader(node["class"])
            return classify_level(
                effective_pv(cluster), AlarmBand.from_cluster(cluster)
            ).name
        cluster = reader(node["field"][0])
        return cluster.get(node["field"][1])
    except (LookupError, RuntimeError):  # unknown path, transport trouble
        return None


class ActionScheduler:
    """Turns a procedure into per-tick due lists, launch-offset applied.

    ``due`` is monotonic in ``now_s`` and deterministic: the runner and the
    network client share it so a replayed attack lands on the same ticks.
    """

    def __init__(self, spec: AttackSpec, launch_offset_s: float) -> None:
        self.spec = spec
        self.launch_offset_s = launch_offset_s
        self._pending: list[dict[str, Any]] = [
            {"action": action, "next_due": launch_offset_s + action.time_s}
            for action in spec.procedure
        ]

    @property
    def exhausted(self) -> bool:
        return all(entry["next_due"] is None for entry in self._pending)

    def due(self, now_s: float, dt_s: float) -> list[TimedAction]:
        fire: list[TimedAction] = []
        for entry in self._pending:
            action: TimedAction = entry["action"]
            while entry["next_due"] is not None and now_s >= entry["next_due"] - 1e-9:
                fire.append(action)
                if action.repeat_interval_s is None:
                    entry["next_due"] = None
                    break
                interval = action.repeat_interval_s
                entry["next_due"] += interval if interval > 0 else dt_s
                if action.until_s is not None and (
                    entry["next_due"] - self.launch_offset_s > action.until_s + 1e-9
                ):
                    entry["next_due"] = None
        return fire


@dataclass(frozen=True)
class ImpactAssessment:
    """What an attack changed, measured from run logs, never hand-entered."""

    cm_components: tuple[str, ...]
    pr_properties: tuple[str, ...]
    pe_performance: dict[str, float]

    @property
    def is_empty(self) -> bool:
        ratio = self.pe_performance.get("consumer_throughput_ratio", 1.0)
        return not self.cm_components and not self.pr_properties and (
            math.isclose(ratio, 1.0, rel_tol=1e-9, abs_tol=1e-9)
        )

    def as_dict(self) -> dict[str, Any]:
        return {
            "cm_components": list(self.cm_components),
            "pr_properties": list(self.pr_properties),
            "pe_performance": dict(self.pe_performance),
        }


@dataclass
class AttackOutcome:
    spec_id: str
    so_held_at_launch: bool
    executed: bool
    se_reached: bool
    se_reached_at: float | None
    intent_held_at_se: bool
    detector_alarms: list[str] = field(default_factory=list)
    impact: ImpactAssessment | None = None

    def as_dict(self) -> dict[str, Any]:
        return {
            "spec_id": self.spec_id,
            "so_held_at_launch": self.so_held_at_launch,
            "executed": self.executed,
            "se_reached": self.se_reached,
            "se_reached_at": self.se_reached_at,
            "intent_held_at_se": self.intent_held_at_se,
            "detector_alarms": list(self.detector_alarms),
            "impact": None if self.impact is None else self.impact.as_dict(),
        }


def builtin_scenarios() -> tuple[AttackSpec, ...]:
    """The six shipped attack documents, in numeric order."""
    from .configs import attack_names, load_attack_doc

    return tuple(AttackSpec.from_doc(load_attack_doc(n)) for n in attack_names())


# Trajectory columns diverging by more than this mark a component as hit.
_LEVEL_TOL_PCT = 0.5
_VALUE_TOL = 1e-6


def assess_impact(attacked, baseline) -> ImpactAssessment:
    """Diff two run logs of identical shape into the three impact axes.

    ``attacked`` and ``baseline`` are run logs (``ScenarioLog`` or anything
    with the same ``columns``/``column`` surface). Components count as
    affected when their state trajectory diverges, properties when an
    analyzer reading diverges, and performance is summarized as delivered
    consumer water.
    """
    if attacked.columns != baseline.columns:
        raise ValueError("logs have different column sets")
    n_a = len(attacked.column("time_s"))
    n_b = len(baseline.column("time_s"))
    if n_a != n_b or attacked.column("time_s")[-1] != baseline.column("time_s")[-1]:
        raise ValueError("logs cover different durations")

    cm: list[str] = []
    pr: list[str] = []
    for name in attacked.columns:
        kind, _, tag = name.partition(":")
        if not tag:
            continue
        a, b = attacked.column(name), baseline.column(name)
        if kind in ("truth", "pub"):
            if any(abs(x - y) > _LEVEL_TOL_PCT for x, y in zip(a, b)):
                if tag not in cm:
                    cm.append(tag)
        elif kind in ("state", "pump"):
            if any(x != y for x, y in zip(a, b)) and tag not in cm:
                cm.append(tag)
        elif kind == "opening":
            if any(abs(x - y) > _VALUE_TOL for x, y in zip(a, b)) and tag not in cm:
                cm.append(tag)
        elif kind == "ait":
            if any(abs(x - y) > _VALUE_TOL for x, y in zip(a, b)) and tag not in pr:
                pr.append(tag)

    supply_a = attacked.column("consumer_supply_lpm")
    supply_b = baseline.column("consumer_supply_lpm")
    total_a = attacked.column("consumer_totalizer_l")[-1]
    total_b = baseline.column("consumer_totalizer_l")[-1]
    pe = {
        "consumer_throughput_ratio": (total_a / total_b) if total_b else 1.0,
        "consumer_supply_avg_lpm_attacked": sum(supply_a) / len(supply_a),
        "consumer_supply_avg_lpm_baseline": sum(supply_b) / len(supply_b),
        "consumer_delivered_l_attacked": total_a,
        "consumer_delivered_l_baseline": total_b,
    }
    return ImpactAssessment(tuple(cm), tuple(pr), pe)


def run_attack(
    spec: AttackSpec,
    endpoint: str | tuple[str, int],
    lenient: bool = False,
    launch_offset_s: float | None = None,
    watch_s: float | None = None,
    wall_timeout_s: float = 60.0,
) -> AttackOutcome:
    """Drive an attack document against a live engine over the network.

    Connects as an anonymous client, waits for the plant's published clock,
    checks the start condition, then fires the procedure on schedule while
    watching for the end condition. ``launch_offset_s`` holds the launch
    until the plant clock reaches that time; None launches on the first
    frame. In strict mode a failed start condition aborts before any write;
    ``lenient`` executes anyway. Impact is not computed here (that needs
    the run logs); use ``assess_impact`` on the exported logs afterwards.
    """
    from .protocol import ProtocolClient

    if isinstance(endpoint, str):
        host, _, port_text = endpoint.partition(":")
        port = int(port_text) if port_text else None
        client = ProtocolClient(host or "127.0.0.1", port)
    else:
        client = ProtocolClient(endpoint[0], endpoint[1])

    outcome = AttackOutcome(
        spec_id=spec.id,
        so_held_at_launch=False,
        executed=False,
        se_reached=False,
        se_reached_at=None,
        intent_held_at_se=False,
    )
    with client:
        reader: Reader = client.read
        client.subscribe("RUNNER/clock", buffer=64)
        launch_time: float | None = None
        scheduler: ActionScheduler | None = None
        dt_s = 1.0
        deadline = time.monotonic() + wall_timeout_s
        last_time: float | None = None
        while time.monotonic() < deadline:
            event = client.next_event(timeout=1.0)
            if event is None:
                if client.closed:
                    break
                continue
            if event.get("event") != "update":
                continue
            now_s = float(event["value"]["time_s"])
            if last_time is not None and now_s > last_time:
                dt_s = now_s - last_time
            last_time = now_s
            if launch_time is None and (
                launch_offset_s is not None and now_s + 1e-9 < launch_offset_s
            ):
                continue
            if launch_time is None:
                launch_time = now_s
                outcome.so_held_at_launch = eval_predicate(spec.so, reader)
                if not outcome.so_held_at_launch and not lenient:
                    break
                scheduler = ActionScheduler(spec, launch_time)
                outcome.executed = True
            assert scheduler is not None
            for action in scheduler.due(now_s, dt_s):
                client.write(action.path, dict(action.fields))
            if not outcome.se_reached and eval_predicate(spec.se, reader):
                outcome.se_reached = True
                outcome.se_reached_at = now_s
                outcome.intent_held_at_se = eval_predicate(
                    spec.intent_condition, reader
                )
            elapsed = now_s - launch_time
            if watch_s is not None and elapsed >= watch_s:
                break
            if watch_s is None and outcome.se_reached and scheduler.exhausted:
                break
        try:
            alarms = client.read(VIOLATIONS_PATH)
            ids = str(alarms.get("ids", ""))
            outcome.detector_alarms = [v for v in ids.split(";") if v]
        except Exception:
            outcome.detector_alarms = []
    return outcome


def load_spec(path_or_doc: str | Mapping[str, Any]) -> AttackSpec:
    """Load a spec from a JSON file path, builtin name, or parsed document."""
    if isinstance(path_or_doc, Mapping):
        return AttackSpec.from_doc(path_or_doc)
    from .configs import load_attack_doc

    return AttackSpec.from_doc(load_attack_doc(path_or_doc))


def spec_round_trip(spec: AttackSpec) -> AttackSpec:
    """Serialize then reparse; used to prove documents carry everything."""
    return AttackSpec.from_doc(json.loads(json.dumps(spec.as_doc())))
