"""Timestep-level transport plan generator compiled from an embedding.

Given the factory state at timestep ``t``, :func:`step` produces the state at
``t + 1``.  Agents cross one junction per epoch; residual counters record how
much of the current and previous epoch's flow is still to be realized.

Movement within a timestep is resolved jointly: each agent names a target
cell (or none, to wait), junction cells are granted to one incoming head
agent, and an agent moves iff its target is free or its occupant moves away.
Swaps are refused; rotations around a cycle of three or more cells are
allowed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .milp import TrafficSystemEmbedding
from .model import Cell, SFEInstance

NULL = 0


class GeneratorError(RuntimeError):
    """Base class for generator failures."""


class PlanDriftError(GeneratorError):
    """An agent reached a junction with no exit road that still wants its cargo."""


class UnmetDemandError(GeneratorError):
    """A dropped epoch still had unrealized flow, pickups or deposits."""


class EmptyBufferError(GeneratorError):
    """A pickup was due but the output buffer lacked the token."""


class CapacityError(GeneratorError):
    """The initial queue does not fit on its road."""


@dataclass(frozen=True, eq=False)
class FactoryState:
    """Snapshot at one timestep.

    Buffers are ``(machines, tokens)`` count arrays, column ``k`` holding
    token ``k + 1``.  Cargo 0 is the null token.
    """

    t: int
    buf_in: np.ndarray
    buf_out: np.ndarray
    agent_cell: tuple[Cell, ...]
    agent_cargo: tuple[int, ...]

    @property
    def num_agents(self) -> int:
        return len(self.agent_cell)

    def occupancy(self) -> dict[Cell, int]:
        return {c: a for a, c in enumerate(self.agent_cell)}


@dataclass
class Residual:
    b_in: np.ndarray  # (roads, tokens + 1)
    b_out: np.ndarray  # (roads, tokens + 1)
    pickup: np.ndarray  # (machines, tokens)
    deposit: np.ndarray  # (machines, tokens)


@dataclass
class GeneratorState:
    residual: dict[int, Residual] = field(default_factory=dict)
    can_change: set[int] = field(default_factory=set)
    arrival: list[int | None] = field(default_factory=list)  # None until the first junction
    occupancy: dict[Cell, int] = field(default_factory=dict)
    epoch: int = -1


class _Topology:
    """Per-instance lookup tables used on every step."""

    def __init__(self, instance: SFEInstance):
        self.instance = instance
        self.next_cell: dict[Cell, Cell] = {}
        self.head_of: dict[Cell, int] = {}
        for rd in instance.roads:
            for a, b in zip(rd.path, rd.path[1:]):
                self.next_cell[a] = b
            self.next_cell[rd.head] = instance.junctions[rd.to_junction].cell
            self.head_of[rd.head] = rd.id
        self.junction_at = instance.cell_junction
        self.input_at: dict[Cell, list[int]] = {}
        self.output_at: dict[Cell, list[int]] = {}
        for m, mach in enumerate(instance.machines):
            if mach.input_cell is not None and not mach.is_source:
                self.input_at.setdefault(mach.input_cell, []).append(m)
            if mach.output_cell is not None and not mach.is_sink:
                self.output_at.setdefault(mach.output_cell, []).append(m)


_TOPO_CACHE: dict[int, _Topology] = {}


def _topology(instance: SFEInstance) -> _Topology:
    topo = _TOPO_CACHE.get(id(instance))
    if topo is None or topo.instance is not instance:
        topo = _Topology(instance)
        _TOPO_CACHE.clear()
        _TOPO_CACHE[id(instance)] = topo
    return topo


# -- initialization ----------------------------------------------------------


def initialize_sf(instance: SFEInstance, emb: TrafficSystemEmbedding) -> tuple[FactoryState, GeneratorState]:
    """Queue the epoch-0 outbound agents at road heads and seed one cycle of buffer stock."""
    cells: list[Cell] = []
    cargo: list[int] = []
    for rd in instance.roads:
        counts = emb.b_out[rd.id, 0]
        total = int(counts.sum())
        if total > rd.length:
            raise CapacityError(f"road {rd.id} needs {total} queued agents but has {rd.length} cells")
        slot = rd.length - 1
        for tok in range(len(counts)):
            for _ in range(int(counts[tok])):
                cells.append(rd.path[slot])
                cargo.append(tok)
                slot -= 1
    buf_in = emb.deposit.sum(axis=1).astype(np.int64)
    buf_out = emb.pickup.sum(axis=1).astype(np.int64)
    state = FactoryState(0, buf_in, buf_out, tuple(cells), tuple(cargo))
    gen = GeneratorState(arrival=[None] * len(cells), occupancy=state.occupancy())
    return state, gen


# -- epoch bookkeeping -------------------------------------------------------


def adjust_state_for_new_epoch(emb: TrafficSystemEmbedding, gen: GeneratorState, T: int):
    """Install residuals for epoch ``T`` and retire epoch ``T - 2``."""
    e = T % emb.N
    gen.residual[T] = Residual(
        emb.b_in[:, e].astype(np.int64),
        emb.b_out[:, e].astype(np.int64),
        emb.pickup[:, e].astype(np.int64),
        emb.deposit[:, e].astype(np.int64),
    )
    gen.epoch = T
    old = gen.residual.pop(T - 2, None)
    if old is not None:
        for name in ("b_in", "b_out", "pickup", "deposit"):
            left = getattr(old, name)
            if left.any():
                idx = tuple(int(i) for i in np.argwhere(left)[0])
                raise UnmetDemandError(
                    f"epoch {T - 2}: {int(left.sum())} unrealized {name} events, first at index {idx}"
                )


def run_machines(emb: TrafficSystemEmbedding, state: FactoryState) -> tuple[np.ndarray, np.ndarray]:
    """Aggregate machine activity over one cycle: consume a cycle of inputs, emit a cycle of outputs."""
    buf_in = state.buf_in - emb.deposit.sum(axis=1)
    buf_out = state.buf_out + emb.pickup.sum(axis=1)
    return buf_in, buf_out


# -- movement ----------------------------------------------------------------


def _pick_exit_road(instance, topo, gen, res: Residual, jid: int, cargo: int, occ, wants, rng) -> int:
    best_free, best_moving, rest = [], [], []
    for rid in instance.junctions[jid].exit_roads:
        if res.b_in[rid, cargo] <= 0:
            continue
        tail = instance.roads[rid].path[0]
        occupant = occ.get(tail)
        if occupant is None:
            best_free.append(rid)
        elif wants.get(occupant) is not None:
            best_moving.append(rid)
        else:
            rest.append(rid)
    for group in (best_free, best_moving, rest):
        if group:
            return group[0] if len(group) == 1 else rng.choice(group)
    raise PlanDriftError(
        f"agent at junction {jid} carrying token {cargo} has no exit road with demand in epoch {gen.epoch}"
    )


def move_agents_on_road(road_id: int, instance: SFEInstance, state: FactoryState, gen: GeneratorState,
                        T: int) -> dict[int, Cell | None]:
    """Targets of the agents on one road: the next cell, or ``None`` for a head agent that arrived this epoch."""
    topo = _topology(instance)
    out: dict[int, Cell | None] = {}
    rd = instance.roads[road_id]
    for cell in reversed(rd.path):
        a = gen.occupancy.get(cell)
        if a is None:
            continue
        if cell == rd.head and gen.arrival[a] == T:
            out[a] = None
        else:
            out[a] = topo.next_cell[cell]
    return out


def _resolve(wants: dict[int, Cell | None], cells: tuple[Cell, ...], occ: dict[Cell, int]) -> dict[int, bool]:
    """Decide which agents move: target free, or occupant moving away without a swap."""
    moves: dict[int, bool] = {}
    for start in wants:
        if start in moves:
            continue
        path: list[int] = []
        on_path: dict[int, int] = {}
        a = start
        verdict = None
        while True:
            if a in moves:
                verdict = moves[a]
                break
            if a in on_path:
                cycle = path[on_path[a]:]
                ok = len(cycle) >= 3
                for b in cycle:
                    moves[b] = ok
                path = path[:on_path[a]]
                verdict = ok
                break
            target = wants.get(a)
            if target is None:
                moves[a] = False
                verdict = False
                break
            occupant = occ.get(target)
            if occupant is None:
                moves[a] = True
                verdict = True
                break
            if wants.get(occupant) == cells[a]:
                moves[a] = False  # swap
                verdict = False
                break
            on_path[a] = len(path)
            path.append(a)
            a = occupant
        for b in reversed(path):
            if b not in moves:
                moves[b] = verdict
    return moves


def deposit_token(instance: SFEInstance, gen: GeneratorState, cells, cargo: list[int],
                  buf_in: np.ndarray, events: list | None = None):
    """Unload agents standing on input cells when their arrival epoch still owes a deposit."""
    topo = _topology(instance)
    for cell, ms in topo.input_at.items():
        a = gen.occupancy.get(cell)
        if a is None or cargo[a] == NULL or a not in gen.can_change:
            continue
        res = gen.residual.get(gen.arrival[a])
        if res is None:
            continue
        tok = cargo[a]
        for m in ms:
            if res.deposit[m, tok - 1] > 0:
                res.deposit[m, tok - 1] -= 1
                buf_in[m, tok - 1] += 1
                cargo[a] = NULL
                gen.can_change.discard(a)
                if events is not None:
                    events.append({"kind": "deposit", "agent": a, "machine": m, "token": tok})
                break


def pickup_token(instance: SFEInstance, gen: GeneratorState, cells, cargo: list[int],
                 buf_out: np.ndarray, events: list | None = None):
    """Load empty agents on output cells; the token with the most outstanding pickups goes first."""
    topo = _topology(instance)
    for cell, ms in topo.output_at.items():
        a = gen.occupancy.get(cell)
        if a is None or cargo[a] != NULL or a not in gen.can_change:
            continue
        res = gen.residual.get(gen.arrival[a])
        if res is None:
            continue
        for m in ms:
            row = res.pickup[m]
            if not row.any():
                continue
            k = int(np.argmax(row))  # ties resolve to the smaller token id
            if buf_out[m, k] <= 0:
                raise EmptyBufferError(f"machine {m} owes a pickup of token {k + 1} but its output buffer is empty")
            row[k] -= 1
            buf_out[m, k] -= 1
            cargo[a] = k + 1
            gen.can_change.discard(a)
            if events is not None:
                events.append({"kind": "pickup", "agent": a, "machine": m, "token": k + 1})
            break


def step(instance: SFEInstance, emb: TrafficSystemEmbedding, state: FactoryState, gen: GeneratorState,
         rng_seed: int = 0, events: list | None = None) -> FactoryState:
    """Advance the factory by one timestep; ``gen`` is updated in place."""
    topo = _topology(instance)
    t = state.t
    L, NL = emb.L, emb.hyper.cycle_len
    T = t // L
    buf_in, buf_out = state.buf_in.copy(), state.buf_out.copy()
    if t % NL == 0 and t > 0:
        buf_in, buf_out = run_machines(emb, state)
    if t % L == 0:
        adjust_state_for_new_epoch(emb, gen, T)
    res = gen.residual[T]
    rng = random.Random(rng_seed * 1_000_003 + t)

    cells = state.agent_cell
    cargo = list(state.agent_cargo)
    occ = gen.occupancy
    wants: dict[int, Cell | None] = {}
    for rd in instance.roads:
        wants.update(move_agents_on_road(rd.id, instance, state, gen, T))

    # one head agent per junction cell and step
    claims: dict[Cell, list[int]] = {}
    for a, target in wants.items():
        if target is not None and target in topo.junction_at:
            claims.setdefault(target, []).append(a)
    for jcell, heads in claims.items():
        if len(heads) > 1:
            heads.sort(key=lambda b: instance.cell_road[cells[b]][0])
            for b in heads[1:]:
                wants[b] = None

    junction_agents = [(occ[j.cell], j.id) for j in instance.junctions if j.cell in occ]
    for a, jid in junction_agents:
        rid = _pick_exit_road(instance, topo, gen, res, jid, cargo[a], occ, wants, rng)
        wants[a] = instance.roads[rid].path[0]

    moves = _resolve(wants, cells, occ)
    new_cells = list(cells)
    for a, go in moves.items():
        if not go:
            continue
        src, dst = cells[a], wants[a]
        new_cells[a] = dst
        if src in topo.junction_at:
            rid = instance.cell_road[dst][0]
            res.b_in[rid, cargo[a]] -= 1
            gen.can_change.add(a)
            gen.arrival[a] = T
        elif dst in topo.junction_at:
            rid = instance.cell_road[src][0]
            res.b_out[rid, cargo[a]] -= 1
            if res.b_out[rid, cargo[a]] < 0:
                raise PlanDriftError(f"road {rid} released more agents with token {cargo[a]} than planned in epoch {T}")
        if events is not None:
            events.append({"kind": "move", "agent": a, "from": list(src), "to": list(dst)})
    if events is not None:
        events.extend({"kind": "wait", "agent": a} for a in range(len(cells)) if not moves.get(a))

    gen.occupancy = {c: a for a, c in enumerate(new_cells)}
    deposit_token(instance, gen, new_cells, cargo, buf_in, events)
    pickup_token(instance, gen, new_cells, cargo, buf_out, events)
    return FactoryState(t + 1, buf_in, buf_out, tuple(new_cells), tuple(cargo))


def state_record(state: FactoryState, events: list | None = None) -> dict:
    """One line of the timestep trace."""
    return {
        "t": state.t,
        "agents": [{"id": a, "cell": list(c), "cargo": k}
                   for a, (c, k) in enumerate(zip(state.agent_cell, state.agent_cargo))],
        "events": events or [],
    }


__all__ = [
    "FactoryState", "GeneratorState", "Residual", "GeneratorError", "PlanDriftError",
    "UnmetDemandError", "EmptyBufferError", "CapacityError", "initialize_sf", "step",
    "adjust_state_for_new_epoch", "move_agents_on_road", "deposit_token", "pickup_token",
    "run_machines", "state_record",
]
