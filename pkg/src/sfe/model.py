"""Domain types for manufacturing procedures, machines and grid layouts.

The layout is an ASCII grid.  Road cells carry an exit direction
(``>``, ``<``, ``^``, ``v``), ``+`` marks a junction cell and ``#``/``.``
are non-traversable.  Coordinates are ``(x, y)`` with the origin at the
top-left character.

A road cell's entry is the road cell whose exit points into it.  A road cell
with no such predecessor is fed by its single adjacent junction cell (the one
it does not exit into); that cell is the tail of a road.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

Cell = tuple[int, int]

DIRECTIONS = {">": (1, 0), "<": (-1, 0), "^": (0, -1), "v": (0, 1)}
JUNCTION = "+"
OBSTACLE = "#"
EMPTY = "."
GRID_CHARS = set(DIRECTIONS) | {JUNCTION, OBSTACLE, EMPTY}
NULL_TOKEN = 0


class ParseError(ValueError):
    """The instance document is malformed."""


class ValidationError(ValueError):
    """The instance is well formed but breaks a model rule."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [Violation("Invalid", violations)]
        elif isinstance(violations, Violation):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class Violation:
    rule: str
    detail: str = ""

    def __str__(self):
        return f"{self.rule}: {self.detail}" if self.detail else self.rule


# -- procedure ---------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    id: int
    name: str


@dataclass(frozen=True)
class Process:
    id: str
    inputs: dict[int, int]
    outputs: dict[int, int]
    is_output: bool = False

    @property
    def is_source(self) -> bool:
        return not self.inputs

    @property
    def is_sink(self) -> bool:
        return not self.outputs

    def num_in(self, token: int) -> int:
        return self.inputs.get(token, 0)

    def num_out(self, token: int) -> int:
        return self.outputs.get(token, 0)


@dataclass(frozen=True)
class ManufacturingProcedure:
    tokens: tuple[Token, ...]
    processes: tuple[Process, ...]

    def __post_init__(self):
        ids = [t.id for t in self.tokens]
        if ids != list(range(1, len(ids) + 1)):
            raise ValidationError(Violation("TokenIds", "token ids must be dense 1..|T|"))
        outputs = [p for p in self.processes if p.is_output]
        if len(outputs) != 1:
            raise ValidationError(
                Violation("OutputProcess", f"exactly one output process required, found {len(outputs)}")
            )
        if not outputs[0].is_sink:
            raise ValidationError(Violation("OutputProcess", "the output process must be a sink process"))
        for p in self.processes:
            if not p.inputs and not p.outputs:
                raise ValidationError(Violation("EmptyProcess", f"process {p.id} has no inputs and no outputs"))
            for tok, count in (*p.inputs.items(), *p.outputs.items()):
                if tok not in ids:
                    raise ValidationError(Violation("UndeclaredToken", f"process {p.id} uses token {tok}"))
                if count < 1:
                    raise ValidationError(Violation("TokenCount", f"process {p.id} has count {count}"))

    @property
    def num_tokens(self) -> int:
        return len(self.tokens)

    @cached_property
    def output_index(self) -> int:
        return next(i for i, p in enumerate(self.processes) if p.is_output)

    @property
    def output_process(self) -> Process:
        return self.processes[self.output_index]

    def process_index(self, pid: str) -> int:
        for i, p in enumerate(self.processes):
            if p.id == pid:
                return i
        raise KeyError(pid)

    def token_name(self, tok: int) -> str:
        return "null" if tok == NULL_TOKEN else self.tokens[tok - 1].name


# -- factory -----------------------------------------------------------------


@dataclass(frozen=True)
class MachineSpec:
    id: str
    supported: dict[int, int]  # process index -> runtime in timesteps
    input_cell: Cell | None
    output_cell: Cell | None
    is_source: bool = False
    is_sink: bool = False


@dataclass(frozen=True)
class Layout:
    rows: tuple[str, ...]

    @property
    def width(self) -> int:
        return len(self.rows[0]) if self.rows else 0

    @property
    def height(self) -> int:
        return len(self.rows)

    def char(self, cell: Cell) -> str:
        x, y = cell
        if 0 <= y < self.height and 0 <= x < self.width:
            return self.rows[y][x]
        return EMPTY

    def is_road(self, cell: Cell) -> bool:
        return self.char(cell) in DIRECTIONS

    def is_junction(self, cell: Cell) -> bool:
        return self.char(cell) == JUNCTION

    def is_traversable(self, cell: Cell) -> bool:
        return self.is_road(cell) or self.is_junction(cell)

    @cached_property
    def cells(self) -> tuple[Cell, ...]:
        """Traversable cells in row-major order."""
        return tuple(
            (x, y) for y in range(self.height) for x in range(self.width) if self.is_traversable((x, y))
        )

    @cached_property
    def junction_cells(self) -> tuple[Cell, ...]:
        return tuple(c for c in self.cells if self.is_junction(c))

    def road_exit(self, cell: Cell) -> Cell:
        dx, dy = DIRECTIONS[self.char(cell)]
        return (cell[0] + dx, cell[1] + dy)

    @cached_property
    def _entries(self) -> dict[Cell, list[Cell]]:
        entries: dict[Cell, list[Cell]] = {c: [] for c in self.cells}
        for c in self.cells:
            if self.is_road(c):
                nxt = self.road_exit(c)
                if nxt in entries:
                    entries[nxt].append(c)
        for c in self.cells:
            if self.is_road(c) and not entries[c]:
                ex = self.road_exit(c)
                entries[c] = [n for n in neighbors(c) if self.is_junction(n) and n != ex]
        return entries

    def entry_cells(self, cell: Cell) -> list[Cell]:
        return list(self._entries[cell])

    def exit_cells(self, cell: Cell) -> list[Cell]:
        if self.is_road(cell):
            ex = self.road_exit(cell)
            return [ex] if self.is_traversable(ex) else []
        return [n for n in neighbors(cell) if self.is_road(n) and self._entries[n] == [cell]]

    def arcs(self) -> list[tuple[Cell, Cell]]:
        """Arcs of the layout graph: (u, v) iff u is an entry cell of v."""
        return [(u, v) for v in self.cells for u in self._entries[v]]


def neighbors(cell: Cell) -> list[Cell]:
    x, y = cell
    return [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)]


def _reachable(start, succ) -> set:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in succ.get(u, ()):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def is_strongly_connected(nodes: Iterable, arcs: Iterable[tuple]) -> bool:
    nodes = list(nodes)
    if not nodes:
        return False
    fwd: dict = {}
    bwd: dict = {}
    for u, v in arcs:
        fwd.setdefault(u, []).append(v)
        bwd.setdefault(v, []).append(u)
    n = len(set(nodes))
    return len(_reachable(nodes[0], fwd)) == n and len(_reachable(nodes[0], bwd)) == n


def validate_layout(layout: Layout) -> list[Violation]:
    """Return every broken layout rule; an empty list means the layout is valid."""
    out: list[Violation] = []
    if not layout.junction_cells:
        out.append(Violation("NoJunction", "layout contains no junction cell"))
    for c in layout.cells:
        if layout.is_road(c):
            ex = layout.road_exit(c)
            if not layout.is_traversable(ex):
                out.append(Violation("BadRoadCellDegree", f"road cell {c} exits into non-traversable {ex}"))
            n_in = len(layout.entry_cells(c))
            if n_in != 1:
                out.append(Violation("BadRoadCellDegree", f"road cell {c} has {n_in} entry cells"))
        else:
            if not layout.entry_cells(c) or not layout.exit_cells(c):
                out.append(Violation("BadJunctionDegree", f"junction {c} needs at least one entry and one exit"))
    if layout.cells and not is_strongly_connected(layout.cells, layout.arcs()):
        out.append(Violation("NotStronglyConnected", "layout graph not strongly connected"))
    return out


# -- traffic system ----------------------------------------------------------


@dataclass(frozen=True)
class Road:
    id: int
    path: tuple[Cell, ...]
    from_junction: int
    to_junction: int
    inputs_on: tuple[int, ...] = ()
    outputs_on: tuple[int, ...] = ()

    @property
    def length(self) -> int:
        return len(self.path)

    @property
    def tail(self) -> Cell:
        return self.path[0]

    @property
    def head(self) -> Cell:
        return self.path[-1]


@dataclass(frozen=True)
class Junction:
    id: int
    cell: Cell
    entry_roads: tuple[int, ...]
    exit_roads: tuple[int, ...]


def extract_traffic_system(layout: Layout, machines: list[MachineSpec]) -> tuple[tuple[Road, ...], tuple[Junction, ...]]:
    """Group road cells into roads and attach junctions and machine buffers.

    Roads are numbered by the row-major order of their tail cells, junctions
    by the row-major order of their cells.
    """
    jcells = layout.junction_cells
    jid = {c: i for i, c in enumerate(jcells)}
    tails = [c for c in layout.cells if layout.is_road(c) and layout.entry_cells(c) and layout.is_junction(layout.entry_cells(c)[0])]
    tails.sort(key=lambda c: (c[1], c[0]))

    visited: set[Cell] = set()
    raw = []
    for tail in tails:
        path = [tail]
        visited.add(tail)
        nxt = layout.road_exit(tail)
        while layout.is_road(nxt):
            if nxt in visited:
                raise ValidationError(Violation("OpenRoad", f"road chain from {tail} revisits {nxt}"))
            visited.add(nxt)
            path.append(nxt)
            nxt = layout.road_exit(nxt)
        if not layout.is_junction(nxt):
            raise ValidationError(Violation("OpenRoad", f"road chain from {tail} does not end at a junction"))
        raw.append((tuple(path), jid[layout.entry_cells(tail)[0]], jid[nxt]))

    stray = [c for c in layout.cells if layout.is_road(c) and c not in visited]
    if stray:
        raise ValidationError(Violation("OpenRoad", f"road cells {stray[:3]} are not on a junction-to-junction chain"))

    cell_road = {c: i for i, (path, _, _) in enumerate(raw) for c in path}
    ins: dict[int, list[int]] = {i: [] for i in range(len(raw))}
    outs: dict[int, list[int]] = {i: [] for i in range(len(raw))}
    for mi, m in enumerate(machines):
        for cell, bucket in ((m.input_cell, ins), (m.output_cell, outs)):
            if cell is None:
                continue
            if cell not in cell_road:
                raise ValidationError(Violation("BufferCell", f"machine {m.id} buffer cell {cell} is not a road cell"))
            bucket[cell_road[cell]].append(mi)

    roads = tuple(
        Road(i, path, fj, tj, tuple(ins[i]), tuple(outs[i])) for i, (path, fj, tj) in enumerate(raw)
    )
    junctions = tuple(
        Junction(
            i,
            c,
            tuple(r.id for r in roads if r.to_junction == i),
            tuple(r.id for r in roads if r.from_junction == i),
        )
        for i, c in enumerate(jcells)
    )
    return roads, junctions


# -- instance ----------------------------------------------------------------


@dataclass(frozen=True)
class SFEInstance:
    procedure: ManufacturingProcedure
    machines: tuple[MachineSpec, ...]
    layout: Layout
    roads: tuple[Road, ...]
    junctions: tuple[Junction, ...]
    agents: int
    strict: bool = field(default=False, compare=False)

    @property
    def num_tokens(self) -> int:
        return self.procedure.num_tokens

    @cached_property
    def max_road_len(self) -> int:
        return max(r.length for r in self.roads)

    @cached_property
    def cell_road(self) -> dict[Cell, tuple[int, int]]:
        """Road cell -> (road id, index along the path from the tail)."""
        return {c: (r.id, k) for r in self.roads for k, c in enumerate(r.path)}

    @cached_property
    def cell_junction(self) -> dict[Cell, int]:
        return {j.cell: j.id for j in self.junctions}

    def with_agents(self, agents: int) -> "SFEInstance":
        return SFEInstance(self.procedure, self.machines, self.layout, self.roads, self.junctions, agents, self.strict)


def build_instance(
    procedure: ManufacturingProcedure,
    machines: list[MachineSpec],
    layout: Layout,
    agents: int,
    strict: bool = False,
) -> SFEInstance:
    """Validate the pieces and assemble an instance with its traffic system."""
    problems = validate_layout(layout)
    if problems:
        raise ValidationError(problems)
    if agents < 0:
        raise ValidationError(Violation("Agents", "agent count must be nonnegative"))
    procs = procedure.processes
    seen_ids = set()
    for m in machines:
        if m.id in seen_ids:
            raise ValidationError(Violation("MachineId", f"duplicate machine id {m.id}"))
        seen_ids.add(m.id)
        for p, rt in m.supported.items():
            if not 0 <= p < len(procs):
                raise ValidationError(Violation("UnknownProcess", f"machine {m.id} supports unknown process {p}"))
            if rt < 1:
                raise ValidationError(Violation("Runtime", f"machine {m.id} runtime {rt} < 1"))
        if m.is_source and any(not procs[p].is_source for p in m.supported):
            raise ValidationError(Violation("SourceMachine", f"machine {m.id} mixes source and other processes"))
        if m.is_sink and any(not procs[p].is_sink for p in m.supported):
            raise ValidationError(Violation("SinkMachine", f"machine {m.id} mixes sink and other processes"))
        if not m.is_source and any(procs[p].is_source for p in m.supported):
            raise ValidationError(Violation("SourceMachine", f"only source machines may run source processes ({m.id})"))
        if not m.is_sink and any(procs[p].is_sink for p in m.supported):
            raise ValidationError(Violation("SinkMachine", f"only sink machines may run sink processes ({m.id})"))
        if m.is_source and m.input_cell is not None:
            raise ValidationError(Violation("SourceMachine", f"source machine {m.id} cannot have an input cell"))
        if m.is_sink and m.output_cell is not None:
            raise ValidationError(Violation("SinkMachine", f"sink machine {m.id} cannot have an output cell"))
        if not m.is_source and m.input_cell is None:
            raise ValidationError(Violation("BufferCell", f"machine {m.id} needs an input cell"))
        if not m.is_sink and m.output_cell is None:
            raise ValidationError(Violation("BufferCell", f"machine {m.id} needs an output cell"))
        for cell in (m.input_cell, m.output_cell):
            if cell is None:
                continue
            if layout.is_junction(cell):
                raise ValidationError(Violation("BufferCell", f"machine {m.id} buffer cell {cell} is a junction cell"))
            if not layout.is_road(cell):
                raise ValidationError(Violation("BufferCell", f"machine {m.id} buffer cell {cell} is not a road cell"))
    roads, junctions = extract_traffic_system(layout, list(machines))
    if strict:
        for r in roads:
            if len(r.inputs_on) + len(r.outputs_on) > 1:
                raise ValidationError(Violation("StrictBuffers", f"road {r.id} carries more than one buffer cell"))
    return SFEInstance(procedure, tuple(machines), layout, roads, junctions, agents, strict)


# -- documents ---------------------------------------------------------------


def _cell(value, what) -> Cell | None:
    if value is None:
        return None
    if not (isinstance(value, (list, tuple)) and len(value) == 2 and all(isinstance(v, int) for v in value)):
        raise ParseError(f"{what} must be [x, y] or null")
    return (value[0], value[1])


def parse_instance(text: str, strict: bool = False) -> SFEInstance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("instance document must be a JSON object")
    missing = {"tokens", "processes", "machines", "agents", "grid"} - doc.keys()
    if missing:
        raise ParseError(f"missing keys: {sorted(missing)}")
    try:
        names = list(doc["tokens"])
        if not all(isinstance(n, str) for n in names) or len(set(names)) != len(names):
            raise ParseError("tokens must be distinct strings")
        if "null" in names:
            raise ParseError("token name 'null' is reserved")
        tid = {n: i + 1 for i, n in enumerate(names)}

        def tokmap(d, pid):
            out = {}
            for name, count in d.items():
                if name not in tid:
                    raise ValidationError(Violation("UndeclaredToken", f"process {pid} uses undeclared token {name}"))
                if not isinstance(count, int) or isinstance(count, bool):
                    raise ParseError(f"token count for {name} must be an integer")
                out[tid[name]] = count
            return out

        processes = []
        for p in doc["processes"]:
            pid = str(p["id"])
            processes.append(
                Process(pid, tokmap(p.get("inputs", {}), pid), tokmap(p.get("outputs", {}), pid), bool(p.get("output", False)))
            )
        if len({p.id for p in processes}) != len(processes):
            raise ValidationError(Violation("ProcessId", "duplicate process ids"))
        outputs = [p.id for p in processes if p.is_output]
        if len(outputs) > 1:
            raise ValidationError(Violation("OutputProcess", f"two processes marked output: {outputs}"))
        procedure = ManufacturingProcedure(tuple(Token(i + 1, n) for i, n in enumerate(names)), tuple(processes))
        pindex = {p.id: i for i, p in enumerate(processes)}

        machines = []
        for m in doc["machines"]:
            sup = {}
            for pid, rt in m["supported"].items():
                if pid not in pindex:
                    raise ValidationError(Violation("UnknownProcess", f"machine {m['id']} supports unknown process {pid}"))
                if not isinstance(rt, int) or isinstance(rt, bool):
                    raise ParseError("runtimes must be integers")
                sup[pindex[pid]] = rt
            if not sup:
                raise ValidationError(Violation("UnknownProcess", f"machine {m['id']} supports no process"))
            machines.append(
                MachineSpec(
                    str(m["id"]),
                    sup,
                    _cell(m.get("input_cell"), "input_cell"),
                    _cell(m.get("output_cell"), "output_cell"),
                    is_source=all(processes[p].is_source for p in sup),
                    is_sink=all(processes[p].is_sink for p in sup),
                )
            )
        grid = doc["grid"]
        if not isinstance(grid, list) or not grid or not all(isinstance(r, str) for r in grid):
            raise ParseError("grid must be a non-empty list of strings")
        if len({len(r) for r in grid}) != 1:
            raise ParseError("grid rows must have equal length")
        bad = {ch for r in grid for ch in r} - GRID_CHARS
        if bad:
            raise ParseError(f"unknown grid characters {sorted(bad)}")
        agents = doc["agents"]
        if not isinstance(agents, int) or isinstance(agents, bool):
            raise ParseError("agents must be an integer")
    except (KeyError, TypeError, AttributeError) as exc:
        raise ParseError(f"malformed instance: {exc!r}") from exc
    return build_instance(procedure, machines, Layout(tuple(grid)), agents, strict=strict)


def load_instance(path, strict: bool = False) -> SFEInstance:
    with open(path, encoding="utf-8") as fh:
        return parse_instance(fh.read(), strict=strict)


def instance_to_dict(inst: SFEInstance) -> dict:
    proc = inst.procedure
    name = proc.token_name
    return {
        "tokens": [t.name for t in proc.tokens],
        "processes": [
            {
                "id": p.id,
                "inputs": {name(t): c for t, c in sorted(p.inputs.items())},
                "outputs": {name(t): c for t, c in sorted(p.outputs.items())},
                "output": p.is_output,
            }
            for p in proc.processes
        ],
        "machines": [
            {
                "id": m.id,
                "supported": {proc.processes[p].id: rt for p, rt in sorted(m.supported.items())},
                "input_cell": list(m.input_cell) if m.input_cell else None,
                "output_cell": list(m.output_cell) if m.output_cell else None,
            }
            for m in inst.machines
        ],
        "agents": inst.agents,
        "grid": list(inst.layout.rows),
    }


def dump_instance(inst: SFEInstance) -> str:
    return json.dumps(instance_to_dict(inst), indent=1)
