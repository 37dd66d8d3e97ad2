"""Discrete mass-balance dynamics.

Every pipe carries either zero flow or its nominal rate (scaled by modulating
valve openings), so tank levels obey the reduced balance

    level[t+1] = level[t] + dt * (Qin[t] - Qout[t]) / area

with levels in percent of capacity and area in liters per percentage point.
``step`` advances the whole plant one tick; ``estimate_level`` folds the same
update over a recorded flow sequence, which is what the detector uses to
project what a level transmitter should have reported. Both run the single
``_advance`` kernel so they agree bit-for-bit on shared inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .plant import (
    CONSUMER,
    DRAIN,
    EXTERNAL,
    PlantState,
    PlantTopology,
    PumpState,
    ValveState,
)


@dataclass(frozen=True)
class StepConfig:
    """Integration settings.

    ``time_scale`` compresses plant time for desk-scale replay: each tick
    advances ``dt_s * time_scale`` plant seconds, which is arithmetically the
    same as multiplying every nominal flow while keeping event order. Logged
    times stay in plant seconds either way.
    """

    dt_s: float = 1.0
    time_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.dt_s <= 0 or self.time_scale <= 0:
            raise ValueError("dt_s and time_scale must be positive")

    @property
    def plant_dt_s(self) -> float:
        return self.dt_s * self.time_scale


def _advance(level_pct: float, qin_lpm: float, qout_lpm: float,
             dt_s: float, area_l_per_pct: float) -> float:
    # The one place the balance update is written down.
    return level_pct + (dt_s * (qin_lpm - qout_lpm) / 60.0) / area_l_per_pct


def _gate_factor(state: PlantState, gates: Sequence[str]) -> float:
    """Fraction of nominal rate the gate chain admits (0 when anything blocks)."""
    factor = 1.0
    for tag in gates:
        if tag in state.pump_states:
            if state.pump_states[tag] is not PumpState.RUNNING:
                return 0.0
        else:
            if state.valve_states.get(tag) is not ValveState.OPEN:
                return 0.0
            factor *= state.valve_openings.get(tag, 0.0)
    return factor


def compute_flows(topology: PlantTopology, state: PlantState) -> dict[str, float]:
    """Instantaneous flow on every path, L/min.

    A path flows at nominal rate times the product of its modulating-valve
    openings when every gate passes; it carries nothing when any gate blocks
    or its source tank is empty. External sources are never empty.
    """
    flows: dict[str, float] = {}
    for path in topology.paths.values():
        if path.source != EXTERNAL:
            if state.levels[topology.level_tag_of(path.source)] <= 0.0:
                flows[path.path_id] = 0.0
                continue
        flows[path.path_id] = path.nominal_rate_lpm * _gate_factor(state, path.gates)
    return flows


def _unit_rates(
    topology: PlantTopology, flows: dict[str, float]
) -> dict[str, tuple[float, float]]:
    """Per hydraulic unit: (total inflow, total outflow) in L/min."""
    rates = {tag: (0.0, 0.0) for tag in topology.level_units()}
    for path in topology.paths.values():
        q = flows[path.path_id]
        if path.sink in topology.tanks:
            tag = topology.level_tag_of(path.sink)
            qin, qout = rates[tag]
            rates[tag] = (qin + q, qout)
        if path.source in topology.tanks:
            tag = topology.level_tag_of(path.source)
            qin, qout = rates[tag]
            rates[tag] = (qin, qout + q)
    return rates


def step(topology: PlantTopology, state: PlantState, cfg: StepConfig) -> PlantState:
    """Advance the plant one tick and return the successor state.

    Resolution order inside the tick: gate the flows, starve out paths whose
    source tank would be drawn below empty (their flow is zeroed for the whole
    tick rather than prorated), integrate levels, then move anything above a
    tank's overflow threshold into ``spilled_liters``. Totalizers accumulate
    the flows that actually moved, so stored volume plus boundary totalizers
    balances external inflow to float precision every tick.
    """
    dt = cfg.plant_dt_s
    flows = compute_flows(topology, state)

    # Starvation fixpoint: zeroing one tank's outflow can starve a downstream
    # tank that was counting on it, so sweep until no new tank goes negative.
    for _ in range(len(topology.level_units()) + 1):
        rates = _unit_rates(topology, flows)
        starved = [
            tag
            for tag, (qin, qout) in rates.items()
            if _advance(state.levels[tag], qin, qout, dt, topology.unit_area(tag)) < 0.0
        ]
        if not starved:
            break
        for path in topology.paths.values():
            if path.source in topology.tanks and (
                topology.level_tag_of(path.source) in starved
            ):
                flows[path.path_id] = 0.0

    new = state.copy()
    rates = _unit_rates(topology, flows)
    for tag, (qin, qout) in rates.items():
        area = topology.unit_area(tag)
        level = _advance(state.levels[tag], qin, qout, dt, area)
        if level < 0.0:  # float guard; starvation sweep keeps this at ~0
            level = 0.0
        limit = topology.unit_overflow(tag)
        if level > limit:
            new.spilled_liters += (level - limit) * area
            level = limit
        new.levels[tag] = level

    for path in topology.paths.values():
        moved = flows[path.path_id] * dt / 60.0
        if moved == 0.0:
            continue
        if path.sink == CONSUMER:
            new.consumer_totalizer_liters += moved
        elif path.sink == DRAIN:
            new.drain_totalizer_liters += moved
        if path.source == EXTERNAL:
            new.external_inflow_liters += moved

    # Level switches latch on the true level with their deadband: on at the
    # high mark, off at the low mark, held in between.
    for tag, inst in topology.instruments.items():
        if inst.kind != "LS" or not inst.measures:
            continue
        level = new.levels[topology.level_tag_of(inst.measures[0])]
        if level >= inst.switch_high_pct:
            new.switch_states[tag] = True
        elif level <= inst.switch_low_pct:
            new.switch_states[tag] = False

    new.tick = state.tick + 1
    new.time_s = state.time_s + dt
    # Keep the flows that actually moved this tick (starved paths at zero):
    # transmitters on these paths must report what the water did, not what
    # the gate positions promised.
    new.flows = dict(flows)
    return new


def estimate_level(
    level_pct: float,
    flow_history: Iterable[tuple[float, float]],
    area_l_per_pct: float,
    dt_s: float,
) -> float:
    """Project a level forward over a recorded (Qin, Qout) L/min sequence.

    Pure linear fold of the balance update: no starvation or overflow
    handling, because the projection deliberately describes what the level
    *should* do if the plant were honest and inside its physical range. An
    empty history returns the starting level unchanged.
    """
    if area_l_per_pct <= 0:
        raise ValueError("area must be positive")
    level = level_pct
    for qin_lpm, qout_lpm in flow_history:
        level = _advance(level, qin_lpm, qout_lpm, dt_s, area_l_per_pct)
    return level
