"""Invariant checking over the published variable stream.

The detector watches exactly what a defender could see on the wire: the
published clusters plus the controller's own command trace. Ground-truth
plant state never enters here; when a sensor lies, the detector must catch
the lie from consistency arguments alone.

Rules are data, not code. Each invariant carries a condition tree in a small
JSON expression grammar (documented in ``INVARIANTS.md``) so rule sets can be
shipped, diffed, and shared with operator tooling. Four kinds of leaf give
the grammar its reach:

* published values (``pv``, ``field``, ``state``, ``class``),
* trailing-window trends of published levels (``delta``),
* a mass-balance estimator fed by commanded flows (``expected_delta``,
  ``residual``): each tick the controller's desired actuator states are
  turned into the flows they should produce, and folded forward from the
  published level one window ago,
* flow-agreement terms (``gated_flow``): what a flow transmitter should read
  given the published states of the elements gating its line.

A condition must hold for ``min_violation_ticks`` consecutive ticks before a
violation is emitted, and the violation then stays open until the condition
clears. Violations never claim attribution: the same evidence could be an
attack, a broken transmitter, or a stuck valve, so ``cause`` is always
``UNKNOWN``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from .clusters import effective_pv, variable_path
from .control import (
    AlarmBand,
    CommandKind,
    ControlCommand,
    classify_level,
)
from .physics import StepConfig
from .plant import ConfigError, PlantTopology

CAUSE_UNKNOWN = "UNKNOWN"

# A published level at or below this is treated as an empty source when
# projecting flows. Mirrors the relay threshold in control: the discrete
# balance can leave a starved tank a fraction of a percent above zero.
BELIEVED_EMPTY_PCT = 0.5

_COMPARISONS: dict[str, Callable[[Any, Any], bool]] = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}

_ARITHMETIC: dict[str, Callable[..., float]] = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "abs": abs,
}

# Leaf node key -> does it reference a tag (vs a flow path id)?
_LEAVES = {
    "const": None,
    "pv": "tag",
    "field": "tag",
    "class": "tag",
    "state": "tag",
    "desired": "tag",
    "delta": "tag",
    "expected_delta": "tag",
    "residual": "tag",
    "gated_flow": "path",
}


@dataclass(frozen=True)
class Invariant:
    """One declarative rule plus its evaluation parameters."""

    id: str
    scope: tuple[str, ...]
    window_s: float
    condition: Mapping[str, Any]
    min_violation_ticks: int = 1
    severity: str = "high"
    note: str = ""


@dataclass
class Violation:
    """An invariant that held false long enough to be reported."""

    invariant_id: str
    first_tick: int
    last_tick: int
    severity: str
    evidence: dict[str, Any] = field(default_factory=dict)
    cause: str = CAUSE_UNKNOWN

    @property
    def duration_ticks(self) -> int:
        return self.last_tick - self.first_tick + 1

    def as_dict(self) -> dict[str, Any]:
        return {
            "invariant_id": self.invariant_id,
            "first_tick": self.first_tick,
            "last_tick": self.last_tick,
            "severity": self.severity,
            "cause": self.cause,
            "evidence": dict(self.evidence),
        }


def _walk(node: Any) -> Iterable[dict[str, Any]]:
    if isinstance(node, dict):
        yield node
        for arg in node.get("args", []):
            yield from _walk(arg)


def _leaf_key(node: Mapping[str, Any]) -> str | None:
    for key in _LEAVES:
        if key in node:
            return key
    return None


def validate_condition(condition: Any, topology: PlantTopology) -> tuple[set[str], set[str]]:
    """Structural check of a rule tree; returns (referenced tags, path ids)."""
    tags: set[str] = set()
    path_ids: set[str] = set()
    for node in _walk(condition):
        if "op" in node:
            op = node["op"]
            if op not in _COMPARISONS and op not in _ARITHMETIC and op not in (
                "and", "or", "not"
            ):
                raise ConfigError(f"unknown rule operator: {op!r}")
            if "args" not in node or not isinstance(node["args"], list):
                raise ConfigError(f"operator {op!r} needs an args list")
            if op in ("not", "abs") and len(node["args"]) != 1:
                raise ConfigError(f"operator {op!r} takes exactly one argument")
            if op in _COMPARISONS and len(node["args"]) != 2:
                raise ConfigError(f"operator {op!r} takes exactly two arguments")
            continue
        key = _leaf_key(node)
        if key is None:
            raise ConfigError(f"unrecognized rule node: {node!r}")
        ref = node[key]
        if key == "const":
            continue
        if key == "field":
            if not (isinstance(ref, list) and len(ref) == 2):
                raise ConfigError("field leaf needs [tag, field_name]")
            ref = ref[0]
        if _LEAVES[key] == "tag":
            if ref not in topology.instruments:
                raise ConfigError(f"rule references unknown tag: {ref!r}")
            tags.add(ref)
        else:
            if ref not in topology.paths:
                raise ConfigError(f"rule references unknown flow path: {ref!r}")
            path_ids.add(ref)
            flow_path = topology.paths[ref]
            tags.update(flow_path.gates)
            if flow_path.fit_tag:
                tags.add(flow_path.fit_tag)
            if flow_path.source in topology.tanks:
                unit = topology.level_tag_of(flow_path.source)
                if unit in topology.instruments:
                    tags.add(unit)
    return tags, path_ids


def load_invariants(
    docs: Iterable[Mapping[str, Any]], topology: PlantTopology
) -> tuple[Invariant, ...]:
    """Parse and validate a rule set; all errors surface here, never mid-run."""
    rules: list[Invariant] = []
    seen: set[str] = set()
    for doc in docs:
        rule_id = doc.get("id")
        if not isinstance(rule_id, str) or not rule_id:
            raise ConfigError("invariant needs a non-empty string id")
        if rule_id in seen:
            raise ConfigError(f"duplicate invariant id: {rule_id}")
        seen.add(rule_id)
        condition = doc.get("condition")
        if condition is None:
            raise ConfigError(f"invariant {rule_id} lacks a condition")
        tags, _ = validate_condition(condition, topology)
        scope = tuple(doc.get("scope", sorted(variable_path(t) for t in tags)))
        for tag in tags:
            if variable_path(tag) not in scope:
                raise ConfigError(
                    f"invariant {rule_id} references {tag} outside its scope"
                )
        window_s = float(doc.get("window_s", 60.0))
        if window_s <= 0:
            raise ConfigError(f"invariant {rule_id} needs window_s > 0")
        debounce = int(doc.get("min_violation_ticks", 1))
        if debounce < 1:
            raise ConfigError(f"invariant {rule_id} needs min_violation_ticks >= 1")
        rules.append(
            Invariant(
                id=rule_id,
                scope=scope,
                window_s=window_s,
                condition=condition,
                min_violation_ticks=debounce,
                severity=str(doc.get("severity", "high")),
                note=str(doc.get("note", "")),
            )
        )
    return tuple(rules)


def builtin_invariants(topology: PlantTopology | None = None) -> tuple[Invariant, ...]:
    """The shipped rule set, validated against the shipped plant by default."""
    from .configs import default_topology, load_invariants_doc

    if topology is None:
        topology = default_topology()
    return load_invariants(load_invariants_doc(), topology)


class _DesiredState:
    """Latest controller-desired state per actuator."""

    __slots__ = ("state", "opening")

    def __init__(self) -> None:
        self.state = ""
        self.opening = 0.0


class Detector:
    """Per-tick evaluator; one instance per run.

    Call :meth:`observe` once per tick, after the controller scan, with the
    published cluster snapshot and the scan's full command list. The return
    value is the violations newly opened this tick; :attr:`violations` keeps
    every violation ever emitted and :attr:`open_violations` the live ones.
    """

    def __init__(
        self,
        topology: PlantTopology,
        invariants: Iterable[Invariant],
        step: StepConfig,
    ) -> None:
        self.topology = topology
        self.invariants = tuple(invariants)
        self.step = step
        dt = step.plant_dt_s
        self._window_ticks: dict[str, int] = {}
        for inv in self.invariants:
            if inv.window_s < dt:
                raise ConfigError(
                    f"invariant {inv.id}: window {inv.window_s}s is shorter "
                    f"than one tick ({dt}s)"
                )
            self._window_ticks[inv.id] = max(1, round(inv.window_s / dt))
        depth = max(self._window_ticks.values(), default=1) + 1
        self._pv_hist: dict[str, deque[float]] = {
            lt: deque(maxlen=depth) for lt in topology.level_units()
        }
        self._inc_hist: dict[str, deque[float]] = {
            lt: deque(maxlen=depth) for lt in topology.level_units()
        }
        self._level_tags = {
            lt for lt in topology.level_units() if lt in topology.instruments
        }
        self._desired: dict[str, _DesiredState] = {}
        self._counts: dict[str, int] = {inv.id: 0 for inv in self.invariants}
        self._open: dict[str, Violation] = {}
        self.violations: list[Violation] = []

    @property
    def open_violations(self) -> list[Violation]:
        return list(self._open.values())

    def observe(
        self,
        tick: int,
        clusters: Mapping[str, Mapping[str, Any]],
        commands: Iterable[ControlCommand],
    ) -> list[Violation]:
        for cmd in commands:
            slot = self._desired.setdefault(cmd.target, _DesiredState())
            if cmd.kind is CommandKind.OPEN:
                slot.state, slot.opening = "Open", 1.0
            elif cmd.kind is CommandKind.CLOSE:
                slot.state, slot.opening = "Closed", 0.0
            elif cmd.kind is CommandKind.SET_OPENING and cmd.value is not None:
                opening = min(max(float(cmd.value), 0.0), 1.0)
                slot.state = "Open" if opening > 0.0 else "Closed"
                slot.opening = opening
            elif cmd.kind is CommandKind.START:
                slot.state, slot.opening = "Running", 1.0
            elif cmd.kind is CommandKind.STOP:
                slot.state, slot.opening = "Stopped", 0.0

        opened: list[Violation] = []
        for inv in self.invariants:
            ctx = _Context(self, clusters, self._window_ticks[inv.id])
            held = _eval(inv.condition, ctx) is True
            if held:
                self._counts[inv.id] += 1
                count = self._counts[inv.id]
                live = self._open.get(inv.id)
                if live is not None:
                    live.last_tick = tick
                elif count >= inv.min_violation_ticks:
                    violation = Violation(
                        invariant_id=inv.id,
                        first_tick=tick - count + 1,
                        last_tick=tick,
                        severity=inv.severity,
                        evidence=ctx.evidence(inv.condition),
                    )
                    self._open[inv.id] = violation
                    self.violations.append(violation)
                    opened.append(violation)
            else:
                self._counts[inv.id] = 0
                self._open.pop(inv.id, None)

        self._push_histories(clusters)
        return opened

    # -- estimator feed -----------------------------------------------------

    def _push_histories(self, clusters: Mapping[str, Mapping[str, Any]]) -> None:
        """Record this tick's published levels and desired-flow increments.

        The desired states committed this tick drive the next physics step,
        so the increment pushed here predicts pv(t+1) - pv(t); window sums
        therefore line up with deltas of the published level history.
        """
        believed = {
            lt: effective_pv(clusters[lt]) if lt in self._level_tags else None
            for lt in self._pv_hist
        }
        qin: dict[str, float] = {lt: 0.0 for lt in self._pv_hist}
        qout: dict[str, float] = {lt: 0.0 for lt in self._pv_hist}
        for path_id, flow_path in self.topology.paths.items():
            rate = flow_path.nominal_rate_lpm
            for gate in flow_path.gates:
                slot = self._desired.get(gate)
                if slot is None or slot.state in ("Closed", "Stopped", ""):
                    rate = 0.0
                    break
                if gate in self.topology.valves():
                    rate *= slot.opening
            if rate != 0.0 and flow_path.source in self.topology.tanks:
                src_unit = self.topology.level_tag_of(flow_path.source)
                src_level = believed.get(src_unit)
                if src_level is not None and src_level <= BELIEVED_EMPTY_PCT:
                    rate = 0.0
            if rate == 0.0:
                continue
            src = flow_path.source
            if src in self.topology.tanks:
                qout[self.topology.level_tag_of(src)] += rate
            sink = flow_path.sink
            if sink in self.topology.tanks:
                qin[self.topology.level_tag_of(sink)] += rate
        dt = self.step.plant_dt_s
        for lt in self._pv_hist:
            if believed[lt] is not None:
                self._pv_hist[lt].append(believed[lt])
            area = self.topology.unit_area(lt)
            self._inc_hist[lt].append((dt * (qin[lt] - qout[lt]) / 60.0) / area)

    def published_delta(self, tag: str, window_ticks: int) -> float | None:
        hist = self._pv_hist.get(tag)
        if hist is None or len(hist) < window_ticks:
            return None
        current = hist[-1]
        return current - hist[-window_ticks]

    def expected_delta(self, tag: str, window_ticks: int) -> float | None:
        hist = self._inc_hist.get(tag)
        if hist is None or len(hist) < window_ticks:
            return None
        window = list(hist)[-window_ticks:]
        return sum(window)


class _Context:
    """Binds one rule evaluation to the current tick's data."""

    def __init__(
        self,
        detector: Detector,
        clusters: Mapping[str, Mapping[str, Any]],
        window_ticks: int,
    ) -> None:
        self.detector = detector
        self.clusters = clusters
        self.window_ticks = window_ticks

    def leaf(self, key: str, ref: Any) -> Any:
        det = self.detector
        if key == "const":
            return ref
        if key == "pv":
            return effective_pv(self.clusters[ref])
        if key == "field":
            return self.clusters[ref[0]].get(ref[1])
        if key == "class":
            cluster = self.clusters[ref]
            try:
                band = AlarmBand.from_cluster(cluster)
            except ConfigError:
                # anyone may write thresholds, including out-of-order ones;
                # an unusable band makes the class unknowable, not a crash
                return None
            return classify_level(effective_pv(cluster), band).name
        if key == "state":
            cluster = self.clusters[ref]
            if ref in det.topology.pumps():
                return cluster.get("Status")
            return cluster.get("State")
        if key == "desired":
            slot = det._desired.get(ref)
            return "" if slot is None else slot.state
        if key == "delta":
            # Published level change across this rule's window. The current
            # tick's value comes from the live snapshot; history ends at the
            # previous tick.
            hist = det._pv_hist.get(ref)
            if hist is None or len(hist) < self.window_ticks:
                return None
            return effective_pv(self.clusters[ref]) - hist[-self.window_ticks]
        if key == "expected_delta":
            return det.expected_delta(ref, self.window_ticks)
        if key == "residual":
            hist = det._pv_hist.get(ref)
            expected = det.expected_delta(ref, self.window_ticks)
            if hist is None or len(hist) < self.window_ticks or expected is None:
                return None
            actual = effective_pv(self.clusters[ref]) - hist[-self.window_ticks]
            return abs(actual - expected)
        if key == "gated_flow":
            return self.gated_flow(ref)
        raise ConfigError(f"unknown leaf: {key!r}")

    def gated_flow(self, path_id: str) -> float:
        """Flow a transmitter should read, per published gate states."""
        det = self.detector
        flow_path = det.topology.paths[path_id]
        rate = flow_path.nominal_rate_lpm
        for gate in flow_path.gates:
            cluster = self.clusters[gate]
            if gate in det.topology.pumps():
                if not cluster.get("Running"):
                    return 0.0
            else:
                if cluster.get("State") != "Open":
                    return 0.0
                rate *= float(cluster.get("Opening", 0.0))
        if flow_path.source in det.topology.tanks:
            src_unit = det.topology.level_tag_of(flow_path.source)
            if src_unit in det._level_tags:
                if effective_pv(self.clusters[src_unit]) <= BELIEVED_EMPTY_PCT:
                    return 0.0
        return rate

    def evidence(self, condition: Any) -> dict[str, Any]:
        """Snapshot every leaf the rule references, for the report."""
        out: dict[str, Any] = {}
        for node in _walk(condition):
            key = _leaf_key(node)
            if key is None or key == "const":
                continue
            ref = node[key]
            label = f"{key}:{ref[0]}.{ref[1]}" if key == "field" else f"{key}:{ref}"
            if label in out:
                continue
            try:
                value = self.leaf(key, ref)
            except KeyError:
                value = None
            if isinstance(value, float):
                value = round(value, 6)
            out[label] = value
        return out


def _eval(node: Any, ctx: _Context) -> Any:
    if not isinstance(node, dict):
        raise ConfigError(f"malformed rule node: {node!r}")
    if "op" in node:
        op = node["op"]
        args = node["args"]
        if op == "and":
            for arg in args:
                if _eval(arg, ctx) is not True:
                    return False
            return True
        if op == "or":
            for arg in args:
                if _eval(arg, ctx) is True:
                    return True
            return False
        if op == "not":
            value = _eval(args[0], ctx)
            return None if value is None else not value
        values = [_eval(arg, ctx) for arg in args]
        if any(v is None for v in values):
            return None
        if op in _COMPARISONS:
            return _COMPARISONS[op](values[0], values[1])
        return _ARITHMETIC[op](*values)
    key = _leaf_key(node)
    if key is None:
        raise ConfigError(f"unrecognized rule node: {node!r}")
    return ctx.leaf(key, node[key])
