"""Command-line driver: validate, solve, simulate, bench, generate."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from .backends import BACKENDS, BackendError, make_backend
from .milp import check_embedding, dump_embedding, embedding_from_dict
from .model import ParseError, ValidationError, load_instance, parse_instance
from .scenarios import FAMILIES, ScenarioSpec, generate, generate_doc
from .search import SearchConfig, ts_planner
from .sim import run_simulation

EXIT_OK, EXIT_INVALID, EXIT_PARSE, EXIT_NO_SOLUTION = 0, 1, 2, 3
DEFAULT_AGENT_CAP = 1000

log = logging.getLogger("sfe")


def _setup_logging():
    level = os.environ.get("SFE_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def _load(path, strict=False):
    """Instance or an exit code."""
    try:
        return load_instance(path, strict=strict)
    except OSError as exc:
        print(f"error: cannot read {path}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_PARSE
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as exc:
        for v in exc.violations:
            print(f"invalid: {v}", file=sys.stderr)
        return EXIT_INVALID


def _search_config(args) -> SearchConfig:
    return SearchConfig(budget=args.budget, gamma=args.gamma, delta=args.delta, max_n=args.max_n)


def _factory(args):
    return lambda: make_backend(args.backend, **({"seed": args.seed} if args.backend == "highs" else {}))


def cmd_validate(args) -> int:
    inst = _load(args.path, strict=args.strict)
    return inst if isinstance(inst, int) else EXIT_OK


def cmd_solve(args) -> int:
    inst = _load(args.path)
    if isinstance(inst, int):
        return inst
    inst = inst.with_agents(min(inst.agents, args.max_agents))
    res = ts_planner(inst, _search_config(args), _factory(args))
    out = Path(args.out) if args.out else Path(args.path).with_suffix(".embedding.json")
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.jsonl")
    trace_path.write_text(res.trace_jsonl(), encoding="utf-8")
    if args.figures:
        from .plots import plot_layout, plot_search_trace

        fig_dir = Path(args.figures)
        fig_dir.mkdir(parents=True, exist_ok=True)
        plot_search_trace(res.trace, fig_dir / "search_trace.png")
        plot_layout(inst, res.best, fig_dir / "layout_flow.png")
    if res.best is None:
        print("no feasible embedding found within the budget", file=sys.stderr)
        return EXIT_NO_SOLUTION
    out.write_text(dump_embedding(inst, res.best), encoding="utf-8")
    print(f"N={res.best_N} L={res.best_L} objective={float(res.best.objective_value):.9g} "
          f"agents={res.best.agents_used} attempts={len(res.trace)}")
    if args.require_positive and res.best.objective_value <= 0:
        print("objective is zero", file=sys.stderr)
        return EXIT_NO_SOLUTION
    return EXIT_OK


def cmd_simulate(args) -> int:
    inst = _load(args.instance)
    if isinstance(inst, int):
        return inst
    try:
        with open(args.embedding, encoding="utf-8") as fh:
            emb = embedding_from_dict(inst, json.load(fh))
    except OSError as exc:
        print(f"error: cannot read {args.embedding}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        print(f"error: malformed embedding: {exc!r}", file=sys.stderr)
        return EXIT_PARSE
    problems = check_embedding(inst, emb)
    if problems:
        for v in problems:
            print(f"embedding violation: {v}", file=sys.stderr)
        return EXIT_INVALID
    trace = open(args.trace, "w", encoding="utf-8") if args.trace else None
    try:
        rep = run_simulation(inst, emb, cycles=args.cycles, seed=args.seed, trace=trace)
    finally:
        if trace is not None:
            trace.close()
    if args.json:
        print(rep.to_json())
    else:
        thr = "unavailable (warm-up only)" if rep.measured_throughput is None else f"{rep.measured_throughput:.9g}"
        print(f"cycles={rep.cycles_run} timesteps={rep.timesteps} agents={rep.agents}")
        print(f"objective={rep.objective:.9g} measured_throughput={thr}")
        print(f"periodic={rep.periodicity_ok} violations={len(rep.violations)} "
              f"mean_step_ms={rep.mean_step_wall_time * 1e3:.3f} max_step_ms={rep.max_step_wall_time * 1e3:.3f}")
        for v in rep.violations[:50]:
            print(f"violation t={v.t} {v.rule}: {v.detail}", file=sys.stderr)
    return EXIT_OK if not rep.violations else EXIT_INVALID


BENCH_COLUMNS = [
    "family", "machines", "seed", "roads", "objective", "N", "L", "solve_s",
    "mean_step_ms", "agents_used", "measured", "violations",
]


def bench_row(spec: ScenarioSpec, config: SearchConfig, factory, cycles: int = 4) -> dict:
    inst = generate(spec)
    t0 = time.perf_counter()
    res = ts_planner(inst, config, factory)
    solve_s = time.perf_counter() - t0
    row = {
        "family": spec.family, "machines": spec.machine_count, "seed": spec.seed,
        "roads": len(inst.roads), "objective": res.objective, "N": res.best_N, "L": res.best_L,
        "solve_s": round(solve_s, 2), "mean_step_ms": None, "agents_used": None,
        "measured": None, "violations": None,
    }
    if res.best is not None:
        rep = run_simulation(inst, res.best, cycles=cycles, seed=spec.seed)
        row.update(
            mean_step_ms=round(rep.mean_step_wall_time * 1e3, 3),
            agents_used=res.best.agents_used,
            measured=rep.measured_throughput,
            violations=len(rep.violations),
        )
    return row


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def format_table(rows: list[dict]) -> str:
    cells = [BENCH_COLUMNS] + [[_fmt(r[c]) for c in BENCH_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(BENCH_COLUMNS))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells)


def cmd_bench(args) -> int:
    families = FAMILIES if args.family == "all" else (args.family,)
    config = _search_config(args)
    rows = []
    for fam in families:
        for mc in args.machines:
            for seed in range(args.seeds):
                spec = ScenarioSpec(fam, mc, spacing=args.spacing, agents=args.max_agents, seed=seed)
                rows.append(bench_row(spec, config, _factory(args), args.cycles))
                log.info("bench %s", rows[-1])
    print(format_table(rows))
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
            w.writeheader()
            w.writerows(rows)
    if args.figures:
        from .plots import plot_bench

        plot_bench(rows, args.figures)
    return EXIT_OK if all(r["objective"] is not None for r in rows) else EXIT_NO_SOLUTION


def cmd_generate(args) -> int:
    spec = ScenarioSpec(args.family, args.machines, spacing=args.spacing, agents=args.max_agents, seed=args.seed)
    text = json.dumps(generate_doc(spec), indent=1)
    parse_instance(text, strict=True)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def _search_flags(p):
    p.add_argument("--budget", type=float, default=60.0, help="wall-clock seconds for the whole search")
    p.add_argument("--gamma", type=int, default=2, help="non-improving attempts before moving on")
    p.add_argument("--delta", type=int, default=1, help="epoch length increment")
    p.add_argument("--max-n", type=int, default=None, help="largest number of epochs to try")
    p.add_argument("--max-agents", type=int, default=DEFAULT_AGENT_CAP)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=sorted(BACKENDS), default="highs")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sfe", description="Plan and verify agent transport in grid factories.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("validate", help="parse and validate an instance")
    p.add_argument("path")
    p.add_argument("--strict", action="store_true", help="at most one buffer cell per road")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="search for a transport plan")
    p.add_argument("path")
    _search_flags(p)
    p.add_argument("--out", help="embedding document (default: <instance>.embedding.json)")
    p.add_argument("--trace", help="search trace, one JSON record per line")
    p.add_argument("--figures", help="directory for search and layout figures")
    p.add_argument("--require-positive", action="store_true", help="exit 3 when the best objective is zero")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="run the timestep generator on an embedding")
    p.add_argument("instance")
    p.add_argument("embedding")
    p.add_argument("--cycles", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="per-timestep JSON lines")
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="generate scenarios, solve and simulate them")
    p.add_argument("--family", choices=FAMILIES + ("all",), default="all")
    p.add_argument("--machines", type=int, nargs="+", default=[8])
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--spacing", type=int, default=4)
    p.add_argument("--cycles", type=int, default=4)
    _search_flags(p)
    p.add_argument("--csv", help="also write the table as CSV")
    p.add_argument("--figures", help="directory for benchmark figures")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("generate", help="write a generated scenario instance")
    p.add_argument("--family", choices=FAMILIES, default="assembly-tree")
    p.add_argument("--machines", type=int, default=8)
    p.add_argument("--spacing", type=int, default=4)
    p.add_argument("--max-agents", type=int, default=DEFAULT_AGENT_CAP)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BackendError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
