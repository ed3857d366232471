"""Hand-built toy factories and seeded scenario families for benchmarks.

The generated families stand in for the food/pharma scenarios used to judge
scale: ``line-chain`` (sequential stages), ``assembly-tree`` (fan-in
assembly) and ``grid-mesh`` (many redundant general-purpose machines).
Factories are Manhattan grids of one-way streets; every machine buffer cell
sits on the tail cell of its own road.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

from .model import DIRECTIONS, SFEInstance, parse_instance

FAMILIES = ("line-chain", "assembly-tree", "grid-mesh")


# -- toy factories -----------------------------------------------------------

TWO_LOOP_GRID = [
    ".v<",
    "v+^",
    ">^.",
]


def two_loop_doc(agents: int = 1, source_runtime: int = 1, sink_runtime: int = 1) -> dict:
    """One junction with two self-loop roads; a source feeds a sink.

    Road 0 (tail (0, 1)) carries the source's output cell, road 1 (tail
    (2, 1)) the sink's input cell.
    """
    return {
        "tokens": ["part"],
        "processes": [
            {"id": "make", "inputs": {}, "outputs": {"part": 1}, "output": False},
            {"id": "ship", "inputs": {"part": 1}, "outputs": {}, "output": True},
        ],
        "machines": [
            {"id": "bin", "supported": {"make": source_runtime}, "input_cell": None, "output_cell": [0, 1]},
            {"id": "chute", "supported": {"ship": sink_runtime}, "input_cell": [2, 1], "output_cell": None},
        ],
        "agents": agents,
        "grid": list(TWO_LOOP_GRID),
    }


def two_loop_instance(agents: int = 1, **kw) -> SFEInstance:
    return parse_instance(json.dumps(two_loop_doc(agents, **kw)))


TOY_CAR_GRID = [
    "+>>>+>>>+",
    "^...v...v",
    "^.#.v.#.v",
    "^...v...v",
    "+>>>+>>>+",
    "^...v...v",
    "^.#.v.#.v",
    "^...v...v",
    "+<<<+<<<+",
]


def toy_car_doc(agents: int = 20) -> dict:
    """Toy-car factory: 9 junctions, 12 roads, 7 machines, 6 processes, 5 tokens."""
    return {
        "tokens": ["plank", "frame", "axle", "wheel", "car"],
        "processes": [
            {"id": "p1", "inputs": {}, "outputs": {"plank": 1}, "output": False},
            {"id": "p2", "inputs": {"plank": 1}, "outputs": {"frame": 1}, "output": False},
            {"id": "p3", "inputs": {"plank": 1}, "outputs": {"wheel": 2}, "output": False},
            {"id": "p4", "inputs": {}, "outputs": {"axle": 1}, "output": False},
            {"id": "p5", "inputs": {"frame": 1, "wheel": 4, "axle": 2}, "outputs": {"car": 1}, "output": False},
            {"id": "p6", "inputs": {"car": 1}, "outputs": {}, "output": True},
        ],
        "machines": [
            {"id": "m1", "supported": {"p1": 1}, "input_cell": None, "output_cell": [1, 0]},
            {"id": "m2", "supported": {"p2": 4, "p3": 3}, "input_cell": [5, 0], "output_cell": [4, 1]},
            {"id": "m3", "supported": {"p2": 4, "p3": 3}, "input_cell": [8, 1], "output_cell": [0, 3]},
            {"id": "m4", "supported": {"p2": 4, "p3": 3}, "input_cell": [1, 4], "output_cell": [5, 4]},
            {"id": "m5", "supported": {"p5": 6}, "input_cell": [4, 5], "output_cell": [8, 5]},
            {"id": "m6", "supported": {"p4": 1}, "input_cell": None, "output_cell": [0, 7]},
            {"id": "m7", "supported": {"p6": 1}, "input_cell": [3, 8], "output_cell": None},
        ],
        "agents": agents,
        "grid": list(TOY_CAR_GRID),
    }


def toy_car_instance(agents: int = 20) -> SFEInstance:
    return parse_instance(json.dumps(toy_car_doc(agents)))


# -- street grids ------------------------------------------------------------


def street_grid(cols: int, rows: int, spacing: int) -> tuple[list[str], list[tuple[int, int]]]:
    """A Manhattan grid of one-way streets with alternating directions.

    ``cols`` x ``rows`` junctions sit every ``spacing`` cells.  Both counts
    must be even, which makes the street network strongly connected.  Even
    rows run east, odd rows west; even columns run north, odd columns south.
    Returns the grid rows and the tail cell of every road.
    """
    if cols < 2 or rows < 2 or cols % 2 or rows % 2 or spacing < 2:
        raise ValueError("need an even number (>= 2) of junction rows and columns and spacing >= 2")
    w = (cols - 1) * spacing + 1
    h = (rows - 1) * spacing + 1
    g = [["." for _ in range(w)] for _ in range(h)]
    tails = []
    for j in range(rows):
        y = j * spacing
        ch = ">" if j % 2 == 0 else "<"
        for i in range(cols - 1):
            x0 = i * spacing
            for x in range(x0 + 1, x0 + spacing):
                g[y][x] = ch
            tails.append((x0 + 1, y) if ch == ">" else (x0 + spacing - 1, y))
    for i in range(cols):
        x = i * spacing
        ch = "v" if i % 2 else "^"
        for j in range(rows - 1):
            y0 = j * spacing
            for y in range(y0 + 1, y0 + spacing):
                g[y][x] = ch
            tails.append((x, y0 + 1) if ch == "v" else (x, y0 + spacing - 1))
    for j in range(rows):
        for i in range(cols):
            g[j * spacing][i * spacing] = "+"
    return ["".join(r) for r in g], tails


def _mark_chassis(grid: list[str], cells) -> list[str]:
    g = [list(r) for r in grid]
    for x, y in cells:
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if 0 <= ny < len(g) and 0 <= nx < len(g[0]) and g[ny][nx] == ".":
                g[ny][nx] = "#"
                break
    return ["".join(r) for r in g]


# -- procedures --------------------------------------------------------------


def _line_chain(rng: random.Random, n_proc: int):
    stages = max(n_proc - 2, 1)
    tokens = [f"t{i}" for i in range(stages + 1)]
    procs = [{"id": "src", "inputs": {}, "outputs": {tokens[0]: 1}, "output": False}]
    for i in range(stages):
        procs.append({"id": f"s{i}", "inputs": {tokens[i]: 1}, "outputs": {tokens[i + 1]: 1}, "output": False})
    procs.append({"id": "out", "inputs": {tokens[-1]: 1}, "outputs": {}, "output": True})
    return tokens, procs


def _assembly_tree(rng: random.Random, n_proc: int):
    # two raw sources, part-making stages split over two branches,
    # one assembler, one output chute
    inner = max(n_proc - 4, 2)
    left = inner // 2
    right = inner - left
    tokens = ["rawA", "rawB"]
    procs = [
        {"id": "srcA", "inputs": {}, "outputs": {"rawA": 1}, "output": False},
        {"id": "srcB", "inputs": {}, "outputs": {"rawB": 1}, "output": False},
    ]
    for branch, raw, n in (("A", "rawA", left), ("B", "rawB", right)):
        prev = raw
        for i in range(n):
            tok = f"{branch}{i}"
            tokens.append(tok)
            mult = rng.randint(1, 2) if i == n - 1 else 1
            procs.append({"id": f"mk{tok}", "inputs": {prev: 1}, "outputs": {tok: mult}, "output": False})
            prev = tok
    tokens.append("product")
    procs.append({
        "id": "assemble",
        "inputs": {f"A{left - 1}": rng.randint(1, 2), f"B{right - 1}": rng.randint(1, 2)},
        "outputs": {"product": 1},
        "output": False,
    })
    procs.append({"id": "out", "inputs": {"product": 1}, "outputs": {}, "output": True})
    return tokens, procs


@dataclass(frozen=True)
class ScenarioSpec:
    family: str
    machine_count: int
    process_count: int | None = None
    spacing: int = 4
    agents: int = 1000
    seed: int = 0
    runtime_range: tuple[int, int] = (2, 6)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.process_count is not None and self.process_count < 3:
            raise ValueError("process_count must be >= 3")
        lo, hi = self.runtime_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad runtime range {self.runtime_range}")
        if self.agents < 0:
            raise ValueError("agents must be >= 0")


def generate_doc(spec: ScenarioSpec) -> dict:
    rng = random.Random(f"{spec.family}:{spec.machine_count}:{spec.process_count}:{spec.seed}")
    n_proc = spec.process_count or {"line-chain": 8, "assembly-tree": 8, "grid-mesh": 6}[spec.family]
    if spec.family == "assembly-tree":
        tokens, procs = _assembly_tree(rng, n_proc)
    else:
        tokens, procs = _line_chain(rng, n_proc)

    sources = [p["id"] for p in procs if not p["inputs"]]
    sinks = [p["id"] for p in procs if not p["outputs"]]
    middle = [p["id"] for p in procs if p["inputs"] and p["outputs"]]

    # every process gets a machine; extra machines add capacity
    plan: list[list[str]] = [[p] for p in sources + middle + sinks]
    if spec.machine_count < len(plan):
        raise ValueError(f"{spec.family} with {len(procs)} processes needs at least {len(plan)} machines")
    for _ in range(spec.machine_count - len(plan)):
        if spec.family == "grid-mesh":
            # redundant general-purpose cells plus extra feeders and chutes
            u = rng.random()
            if u < 0.1:
                plan.append([rng.choice(sources)])
            elif u < 0.2:
                plan.append([rng.choice(sinks)])
            else:
                plan.append(sorted(rng.sample(middle, rng.randint(1, len(middle)))))
        else:
            u = rng.random()
            if u < 0.15:
                plan.append([rng.choice(sources)])
            elif u < 0.2:
                plan.append([rng.choice(sinks)])
            else:
                i0 = rng.randrange(len(middle))
                plan.append(middle[i0:i0 + rng.randint(1, 2)])

    kinds = [(all(p in sources for p in s), all(p in sinks for p in s)) for s in plan]
    n_buffers = sum((not src) + (not snk) for src, snk in kinds)
    side = 2
    while 2 * side * (side - 1) < n_buffers:
        side += 2
    grid, tails = street_grid(side, side, spec.spacing)
    rng.shuffle(tails)

    lo, hi = spec.runtime_range
    machines = []
    for idx, (supported, (src, snk)) in enumerate(zip(plan, kinds)):
        runtimes = {p: (1 if (p in sources or p in sinks) else rng.randint(lo, hi)) for p in supported}
        machines.append({
            "id": f"m{idx}",
            "supported": runtimes,
            "input_cell": None if src else list(tails.pop()),
            "output_cell": None if snk else list(tails.pop()),
        })
    buffer_cells = [tuple(c) for m in machines for c in (m["input_cell"], m["output_cell"]) if c]
    return {
        "tokens": tokens,
        "processes": procs,
        "machines": machines,
        "agents": spec.agents,
        "grid": _mark_chassis(grid, buffer_cells),
    }


def generate(spec: ScenarioSpec) -> SFEInstance:
    return parse_instance(json.dumps(generate_doc(spec)), strict=True)


def completeness_doc(rng: random.Random, agents: int | None = None) -> dict:
    """Random street grid with a one-token source -> sink procedure.

    Buffer cells land on arbitrary road cells, not only on tails.
    """
    grid, _ = street_grid(2 * rng.randint(1, 2), 2 * rng.randint(1, 2), rng.randint(2, 5))
    road_cells = [(x, y) for y, row in enumerate(grid) for x, ch in enumerate(row) if ch in DIRECTIONS]
    a, b = rng.sample(road_cells, 2)
    return {
        "tokens": ["part"],
        "processes": [
            {"id": "make", "inputs": {}, "outputs": {"part": 1}, "output": False},
            {"id": "ship", "inputs": {"part": 1}, "outputs": {}, "output": True},
        ],
        "machines": [
            {"id": "src", "supported": {"make": rng.randint(1, 5)}, "input_cell": None, "output_cell": list(a)},
            {"id": "dst", "supported": {"ship": rng.randint(1, 5)}, "input_cell": list(b), "output_cell": None},
        ],
        "agents": agents if agents is not None else rng.randint(1, 4),
        "grid": grid,
    }
