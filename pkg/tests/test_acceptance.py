"""End-to-end acceptance checks, one test per criterion.

Each test stores a one-line verdict in ``conftest.ACCEPTANCE_LINES``; the
lines are printed as they are produced and again in the terminal summary.
The full module takes roughly 50 minutes (the solver runs are wall-clock
bounded).  Run it alone with ``python3 tests/test_acceptance.py``.
"""

import json
import random
import sys
import time

import pytest

from conftest import ACCEPTANCE_LINES, chain_doc, make, three_road_doc
from oracles import brute_force_optimum, junction_microsim
from sfe.backends import HighsBackend
from sfe.cli import main as cli_main
from sfe.milp import HyperParams, check_embedding, load_embedding, queue_bound, solve_ts_milp
from sfe.scenarios import FAMILIES, ScenarioSpec, completeness_doc, generate, generate_doc, two_loop_doc
from sfe.search import SearchConfig, ts_planner
from sfe.sim import run_simulation

SIZES = ((8, 4), (24, 3), (60, 3))  # machines, seeds: 10 instances per family
SOLVE_BUDGET = 60.0
HALF_BUDGET = 30.0
OVERRUN = 2.0  # seconds allowed past the budget for the final extraction and file output
REL_TOL = 0.02


def report(num: int, ok: bool, text: str):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {text}"
    ACCEPTANCE_LINES[num] = line
    print(line, flush=True)


def _suite_specs():
    return [ScenarioSpec(f, m, seed=s) for f in FAMILIES for m, seeds in SIZES for s in range(seeds)]


def _solve_suite(tmp_dir, budget):
    """Run the solve command on every suite instance; returns records with instance, embedding and wall time."""
    records = []
    for spec in _suite_specs():
        name = f"{spec.family}-{spec.machine_count}-{spec.seed}"
        path = tmp_dir / f"{name}.json"
        path.write_text(json.dumps(generate_doc(spec)))
        out = tmp_dir / f"{name}.b{int(budget)}.embedding.json"
        t0 = time.perf_counter()
        code = cli_main(["solve", str(path), "--budget", str(budget), "--out", str(out)])
        wall = time.perf_counter() - t0
        inst = generate(spec)
        emb = load_embedding(inst, out) if code == 0 else None
        records.append({"name": name, "instance": inst, "embedding": emb, "code": code, "wall": wall})
        objective = "-" if emb is None else f"{float(emb.objective_value):.6g}"
        print(f"  {name} budget={budget:g}s exit={code} wall={wall:.1f}s objective={objective}", flush=True)
    return records


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    return _solve_suite(tmp_path_factory.mktemp("suite"), SOLVE_BUDGET)


@pytest.fixture(scope="module")
def simulations(suite):
    sims = {}
    for rec in suite:
        if rec["embedding"] is not None:
            sims[rec["name"]] = run_simulation(rec["instance"], rec["embedding"], cycles=4, seed=0)
    return sims


def test_constraint_conformance(suite):
    missing = [r["name"] for r in suite if r["embedding"] is None]
    bad = [r["name"] for r in suite if r["embedding"] is not None and check_embedding(r["instance"], r["embedding"])]
    slow = [r["name"] for r in suite if r["wall"] > SOLVE_BUDGET + OVERRUN]
    worst = max(r["wall"] for r in suite)
    positive = sum(1 for r in suite if r["embedding"] is not None and r["embedding"].objective_value > 0)
    ok = not missing and not bad and not slow
    report(1, ok, f"{len(suite)} instances, {len(suite) - len(missing)} embeddings, {len(bad)} failing re-check, "
                  f"{positive} with positive objective, slowest solve {worst:.1f}s (budget {SOLVE_BUDGET:g}s)")
    assert not missing, missing
    assert not bad, bad
    assert not slow, slow


def test_simulation_conformance(suite, simulations):
    dirty = {n: len(s.violations) for n, s in simulations.items() if s.violations}
    aperiodic = [n for n, s in simulations.items() if not s.periodicity_ok]
    steps = sum(s.timesteps for s in simulations.values())
    ok = len(simulations) == len(suite) and not dirty and not aperiodic
    report(2, ok, f"{len(simulations)} runs x 4 cycles ({steps} timesteps), "
                  f"{len(dirty)} with violations, {len(aperiodic)} aperiodic")
    assert len(simulations) == len(suite)
    assert not dirty, dirty
    assert not aperiodic, aperiodic


def test_throughput_consistency(simulations):
    errors = {n: s.relative_error() for n, s in simulations.items()}
    off = {n: e for n, e in errors.items() if e is None or e > REL_TOL}
    worst = max((e for e in errors.values() if e is not None), default=0.0)
    ok = bool(errors) and not off
    report(3, ok, f"{len(errors)} runs, worst relative error {worst:.2e} (tolerance {REL_TOL:g})")
    assert errors and not off, off


TINY_CASES = [
    ("loop a1 N1 L4", lambda: two_loop_doc(1), 1, 4),
    ("loop a1 N2 L6", lambda: two_loop_doc(1), 2, 6),
    ("loop a1 N2 L5", lambda: two_loop_doc(1), 2, 5),
    ("loop a1 N2 L10", lambda: two_loop_doc(1), 2, 10),
    ("loop a2 N1 L6", lambda: two_loop_doc(2), 1, 6),
    ("loop a2 N2 L5", lambda: two_loop_doc(2), 2, 5),
    ("loop a2 N2 L7", lambda: two_loop_doc(2), 2, 7),
    ("loop a2 slow source N2 L5", lambda: two_loop_doc(2, 7), 2, 5),
    ("loop a2 slow sink N2 L7", lambda: two_loop_doc(2, 1, 9), 2, 7),
    ("three a1 N2 L7", lambda: three_road_doc(1), 2, 7),
    ("three a1 N2 L9", lambda: three_road_doc(1), 2, 9),
    ("three a2 N2 L7", lambda: three_road_doc(2), 2, 7),
    ("three a2 N1 L8", lambda: three_road_doc(2), 1, 8),
    ("three a2 swapped N2 L7", lambda: three_road_doc(2, source_cell=(1, 1), sink_cell=(4, 0)), 2, 7),
    ("three a1 same road N2 L9", lambda: three_road_doc(1, source_cell=(2, 1), sink_cell=(3, 1)), 2, 9),
    ("three a2 slow N2 L10", lambda: three_road_doc(2, runtimes=(3, 4)), 2, 10),
    ("chain a1 N2 L6", lambda: chain_doc(1), 2, 6),
    ("chain a2 N2 L5", lambda: chain_doc(2), 2, 5),
    ("chain a2 N1 L4", lambda: chain_doc(2), 1, 4),
    ("chain a2 three roads N2 L8",
     lambda: chain_doc(2, grid=["v<<<<", "+>>>+", "^<<<<"], cells=((4, 0), (1, 1), (2, 1), (0, 2))), 2, 8),
]


def test_oracle_equivalence():
    mismatches = []
    positive = 0
    for name, doc, N, L in TINY_CASES:
        inst = make(doc())
        assert len(inst.roads) <= 3 and len(inst.junctions) <= 2 and inst.agents <= 2 and L <= 10
        want = brute_force_optimum(inst, N, L)
        got = solve_ts_milp(inst, HyperParams(N, L), HighsBackend(), 30)
        got_value = None if got is None else got.objective_value
        positive += bool(want)
        if want != got_value:
            mismatches.append((name, want, got_value))
    report(4, not mismatches, f"{len(TINY_CASES)} tiny instances ({positive} with positive optimum), "
                              f"{len(mismatches)} mismatches")
    assert not mismatches, mismatches


def test_queue_time_bound():
    violations = []
    roads = tight = 0
    for seed in range(200):
        for rec in junction_microsim(random.Random(seed)):
            if not rec["agents"]:
                continue
            roads += 1
            bound = queue_bound(rec["waiting"], rec["exit_len"], rec["entering"])
            slack = bound - rec["worst"]
            tight += slack == 0
            if slack < 0:
                violations.append((seed, rec))
    report(5, not violations, f"200 junction micro-simulations, {roads} exit roads measured, "
                              f"{len(violations)} over the bound, {tight} exactly at it")
    assert not violations, violations[:5]


def test_completeness():
    results = []
    for i in range(20):
        inst = make(completeness_doc(random.Random(i)))
        t0 = time.perf_counter()
        res = ts_planner(inst, SearchConfig(budget=120))
        results.append((i, res.objective, time.perf_counter() - t0))
    zero = [(i, o) for i, o, _ in results if not o or o <= 0]
    worst = max(t for _, _, t in results)
    report(6, not zero, f"20 random layouts, {20 - len(zero)} with positive objective, "
                        f"longest search {worst:.1f}s (budget 120s)")
    assert not zero, zero


def test_scale_analogue():
    inst = generate(ScenarioSpec("grid-mesh", 104, seed=0))
    t0 = time.perf_counter()
    res = ts_planner(inst, SearchConfig(budget=SOLVE_BUDGET))
    wall = time.perf_counter() - t0
    positive = res.best is not None and res.best.objective_value > 0
    rep = run_simulation(inst, res.best, cycles=4, seed=0) if res.best is not None else None
    agents = 0 if rep is None else rep.agents
    mean_ms = float("nan") if rep is None else rep.mean_step_wall_time * 1e3
    ok = positive and wall <= SOLVE_BUDGET + OVERRUN and agents >= 200 and mean_ms <= 50 and rep.ok
    report(7, ok, f"104 machines, {len(inst.roads)} roads: objective {res.objective} at N={res.best_N} "
                  f"L={res.best_L} in {wall:.1f}s; {agents} agents, mean step {mean_ms:.2f} ms, "
                  f"{0 if rep is None else len(rep.violations)} violations")
    assert positive
    assert wall <= SOLVE_BUDGET + OVERRUN
    assert agents >= 200, agents
    assert mean_ms <= 50
    assert rep.ok


def test_anytime(suite, tmp_path_factory):
    short = _solve_suite(tmp_path_factory.mktemp("half"), HALF_BUDGET)
    value = lambda r: float(r["embedding"].objective_value) if r["embedding"] is not None else float("-inf")  # noqa: E731
    drops = [(s["name"], value(s), value(f)) for s, f in zip(short, suite) if value(f) < value(s) - 1e-9]
    gains = sum(1 for s, f in zip(short, suite) if value(f) > value(s) + 1e-9)
    report(8, not drops, f"{len(suite)} instances at {HALF_BUDGET:g}s vs {SOLVE_BUDGET:g}s: "
                         f"{len(drops)} decreases, {gains} improvements")
    assert not drops, drops


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
