"""Run the generator for whole cycles, check every step, measure throughput."""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import IO

import numpy as np

from .milp import TrafficSystemEmbedding
from .model import SFEInstance
from .tplan import FactoryState, GeneratorError, GeneratorState, initialize_sf, state_record, step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepViolation:
    t: int
    rule: str
    detail: str


@dataclass
class SimReport:
    cycles_run: int
    timesteps: int
    agents: int
    measured_throughput: float | None
    deliveries: int
    objective: float
    violations: list[StepViolation] = field(default_factory=list)
    periodicity_ok: bool = True
    max_step_wall_time: float = 0.0
    mean_step_wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations and self.periodicity_ok

    def relative_error(self) -> float | None:
        if self.measured_throughput is None:
            return None
        return abs(self.measured_throughput - self.objective) / max(self.objective, 1e-9)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["violations"] = [asdict(v) for v in self.violations]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def check_step(prev: FactoryState, nxt: FactoryState, instance: SFEInstance) -> list[StepViolation]:
    """Check one transition against the movement and cargo rules, from the layout alone."""
    out: list[StepViolation] = []
    t = nxt.t
    layout = instance.layout
    if len(prev.agent_cell) != len(nxt.agent_cell):
        return [StepViolation(t, "AgentCount", f"{len(prev.agent_cell)} agents became {len(nxt.agent_cell)}")]

    seen: dict = {}
    for a, c in enumerate(nxt.agent_cell):
        if not layout.is_traversable(c):
            out.append(StepViolation(t, "OffRoad", f"agent {a} on non-traversable cell {c}"))
        if c in seen:
            out.append(StepViolation(t, "VertexConflict", f"agents {seen[c]} and {a} share cell {c}"))
        seen[c] = a

    before = {c: a for a, c in enumerate(prev.agent_cell)}
    for a, (src, dst) in enumerate(zip(prev.agent_cell, nxt.agent_cell)):
        if src == dst:
            continue
        if dst not in layout.exit_cells(src):
            out.append(StepViolation(t, "IllegalMove", f"agent {a} jumped {src} -> {dst}"))
        b = before.get(dst)
        if b is not None and b != a and nxt.agent_cell[b] == src:
            if a < b:
                out.append(StepViolation(t, "EdgeConflict", f"agents {a} and {b} swap {src} <-> {dst}"))

    inputs = {}
    outputs = {}
    for m, mach in enumerate(instance.machines):
        if mach.input_cell is not None:
            inputs.setdefault(mach.input_cell, []).append(m)
        if mach.output_cell is not None:
            outputs.setdefault(mach.output_cell, []).append(m)
    for a, (k0, k1) in enumerate(zip(prev.agent_cargo, nxt.agent_cargo)):
        if k0 == k1:
            continue
        cell = nxt.agent_cell[a]
        if k1 == 0 and k0 != 0:
            if cell not in inputs:
                out.append(StepViolation(t, "CargoTeleport", f"agent {a} dropped token {k0} at {cell}"))
        elif k0 == 0:
            if cell not in outputs:
                out.append(StepViolation(t, "CargoTeleport", f"agent {a} gained token {k1} at {cell}"))
        else:
            out.append(StepViolation(t, "CargoTeleport", f"agent {a} swapped token {k0} for {k1}"))

    for name in ("buf_in", "buf_out"):
        arr = getattr(nxt, name)
        if (arr < 0).any():
            out.append(StepViolation(t, "NegativeBuffer", f"{name} has a negative count"))
    return out


def road_profile(instance: SFEInstance, state: FactoryState, gen: GeneratorState | None = None) -> Counter:
    """Multiset of (road, sorted cargo counts) for the agents on each road.

    With ``gen`` given, pickups and deposits still owed by the live epochs are
    applied to the counts of the road holding the machine's buffer cell, so an
    agent one cell short of its buffer at the boundary counts as served.
    """
    per_road: dict[int, Counter] = {}
    cell_road = instance.cell_road
    for c, k in zip(state.agent_cell, state.agent_cargo):
        if c in cell_road:
            per_road.setdefault(cell_road[c][0], Counter())[k] += 1
    if gen is not None:
        for res in gen.residual.values():
            for m, mach in enumerate(instance.machines):
                for k in np.flatnonzero(res.pickup[m]):
                    cnt = per_road.setdefault(cell_road[mach.output_cell][0], Counter())
                    cnt[0] -= int(res.pickup[m, k])
                    cnt[int(k) + 1] += int(res.pickup[m, k])
                for k in np.flatnonzero(res.deposit[m]):
                    cnt = per_road.setdefault(cell_road[mach.input_cell][0], Counter())
                    cnt[int(k) + 1] -= int(res.deposit[m, k])
                    cnt[0] += int(res.deposit[m, k])
    profile = Counter()
    for rid, cnt in per_road.items():
        counts = tuple(sorted((k, v) for k, v in cnt.items() if v))
        if counts:
            profile[(rid, counts)] += 1
    return profile


def run_simulation(instance: SFEInstance, emb: TrafficSystemEmbedding, cycles: int = 4, seed: int = 0,
                   trace: IO[str] | None = None) -> SimReport:
    """Run ``cycles`` full cycles and report throughput measured after the first."""
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    NL = emb.hyper.cycle_len
    p_out = instance.procedure.output_index
    out_proc = instance.procedure.processes[p_out]
    per_run = sum(out_proc.inputs.values())
    out_machines = {m for m in range(len(instance.machines)) if emb.assign[m, p_out]}

    violations: list[StepViolation] = []
    state, gen = initialize_sf(instance, emb)
    deliveries = 0
    profiles = []
    step_times = []
    total = cycles * NL
    for t in range(total):
        events: list = []
        t0 = time.perf_counter()
        try:
            nxt = step(instance, emb, state, gen, seed, events)
        except GeneratorError as exc:
            violations.append(StepViolation(t, type(exc).__name__, str(exc)))
            log.warning("generator stopped at t=%d: %s", t, exc)
            break
        step_times.append(time.perf_counter() - t0)
        violations.extend(check_step(state, nxt, instance))
        if t >= NL:
            deliveries += sum(1 for e in events if e["kind"] == "deposit" and e["machine"] in out_machines)
        if trace is not None:
            trace.write(json.dumps(state_record(nxt, events)) + "\n")
        state = nxt
        if state.t % NL == 0:
            profiles.append(road_profile(instance, state, gen))

    steps_done = len(step_times)
    window = (cycles - 1) * NL
    measured = None
    if cycles > 1 and steps_done == total:
        measured = deliveries / per_run / window
    return SimReport(
        cycles_run=steps_done // NL,
        timesteps=steps_done,
        agents=state.num_agents,
        measured_throughput=measured,
        deliveries=deliveries,
        objective=float(emb.objective_value),
        violations=violations,
        periodicity_ok=all(p == profiles[0] for p in profiles),
        max_step_wall_time=max(step_times, default=0.0),
        mean_step_wall_time=sum(step_times) / len(step_times) if step_times else 0.0,
    )


__all__ = ["SimReport", "StepViolation", "check_step", "run_simulation", "road_profile"]
