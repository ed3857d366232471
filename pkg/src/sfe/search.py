"""Anytime search over the number of epochs and the epoch length."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

from .backends import BackendError, LpBackend, SolveStatus, make_backend
from .milp import BuildError, HyperParams, TrafficSystemEmbedding, build_ts_milp, check_embedding, extract_embedding
from .model import SFEInstance

log = logging.getLogger(__name__)

IMPROVE_TOL = 1e-9
POLL_GRANULE = 0.1  # seconds a solver may overrun its deadline


class Budget:
    """Shared timer for one search.

    Each solve gets the remaining time, capped by ``solve_slice`` when set.
    With ``attempts`` set, the budget counts solve attempts instead of wall
    time and every solve gets ``solve_slice`` (default 60) seconds; this makes
    traces reproducible for deterministic backends.
    """

    def __init__(self, seconds: float = 0.0, attempts: int | None = None, solve_slice: float | None = None,
                 clock: Callable[[], float] = time.perf_counter):
        self.seconds = float(seconds)
        self.attempts = attempts
        self.solve_slice = solve_slice
        self.clock = clock
        self.start = clock()
        self.used_attempts = 0

    def elapsed(self) -> float:
        return self.clock() - self.start

    def exhausted(self) -> bool:
        if self.attempts is not None:
            return self.used_attempts >= self.attempts
        return self.elapsed() >= self.seconds

    def solve_deadline(self) -> float:
        """Seconds the next solve may take."""
        if self.attempts is not None:
            return (self.solve_slice or 60.0) if not self.exhausted() else 0.0
        left = max(self.seconds - self.elapsed(), 0.0)
        return left if self.solve_slice is None else min(left, self.solve_slice)

    def charge(self):
        self.used_attempts += 1


@dataclass(frozen=True)
class SearchConfig:
    budget: float = 60.0
    gamma: int = 2
    delta: int = 1
    max_n: int | None = None
    attempts: int | None = None  # test mode: count solves instead of seconds
    solve_slice: float | None = None

    def __post_init__(self):
        if self.gamma < 1 or self.delta < 1:
            raise ValueError("gamma and delta must be >= 1")
        if self.attempts is None and self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.solve_slice is not None and self.solve_slice <= 0:
            raise ValueError("solve_slice must be > 0")
        if self.max_n is not None and self.max_n < 1:
            raise ValueError("max_n must be >= 1")

    def make_budget(self) -> Budget:
        return Budget(self.budget, self.attempts, self.solve_slice)


@dataclass(frozen=True)
class TraceEntry:
    n: int
    l: int
    outcome: str
    objective: float | None
    elapsed: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "l": self.l,
            "outcome": self.outcome,
            "objective": self.objective,
            "elapsed_ms": round(self.elapsed * 1000.0, 3),
        }


@dataclass
class SearchResult:
    best: TrafficSystemEmbedding | None = None
    best_N: int | None = None
    best_L: int | None = None
    trace: list[TraceEntry] = field(default_factory=list)

    @property
    def objective(self) -> float | None:
        return None if self.best is None else float(self.best.objective_value)

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict()) + "\n" for e in self.trace)


def throughput(emb: TrafficSystemEmbedding | None) -> float:
    return -math.inf if emb is None else float(emb.objective_value)


def improves(new: TrafficSystemEmbedding | None, old: TrafficSystemEmbedding | None) -> bool:
    return throughput(new) > throughput(old) + IMPROVE_TOL


BackendFactory = Callable[[], LpBackend]


def _attempt(instance, hyper, budget: Budget, factory: BackendFactory, trace: list):
    """One bounded solve; appends to the trace and returns an embedding or None."""
    backend = factory()
    model = build_ts_milp(instance, hyper, backend)
    deadline = budget.solve_deadline()
    budget.charge()
    status = backend.solve(deadline)
    emb = None
    if status.has_solution:
        emb = extract_embedding(model)
        problems = check_embedding(instance, emb)
        if problems:
            raise BackendError(f"solution at N={hyper.num_epochs} L={hyper.epoch_len} fails re-check: {problems[:3]}")
    trace.append(TraceEntry(hyper.num_epochs, hyper.epoch_len, status.value,
                            None if emb is None else float(emb.objective_value), budget.elapsed()))
    log.info("N=%d L=%d -> %s %s", hyper.num_epochs, hyper.epoch_len, status.value,
             "" if emb is None else f"{float(emb.objective_value):.6g}")
    return emb


def plan_for_num_epochs(instance: SFEInstance, num_epochs: int, budget: Budget, config: SearchConfig,
                        backend_factory: BackendFactory | None = None, trace: list | None = None):
    """Grow the epoch length from the traversal minimum until ``gamma`` solves in a row fail to improve.

    Returns ``(embedding, L)`` or ``(None, None)``.
    """
    if num_epochs < 1:
        raise BuildError("N must be >= 1")
    factory = backend_factory or make_backend
    trace = trace if trace is not None else []
    best, best_l = None, None
    failures = 0
    L = instance.max_road_len + config.delta
    while failures < config.gamma and not budget.exhausted():
        emb = _attempt(instance, HyperParams(num_epochs, L), budget, factory, trace)
        if improves(emb, best):
            best, best_l = emb, L
            failures = 0
        else:
            failures += 1
        L += config.delta
    return best, best_l


def ts_planner(instance: SFEInstance, config: SearchConfig,
               backend_factory: BackendFactory | None = None) -> SearchResult:
    """Try N = 1, 2, ... and keep the best embedding found within the budget.

    The loop also ends after ``gamma`` consecutive values of N fail to beat
    a positive-throughput incumbent, or when ``max_n`` is passed.
    """
    budget = config.make_budget()
    result = SearchResult()
    n = 1
    stale = 0
    while not budget.exhausted():
        if config.max_n is not None and n > config.max_n:
            break
        emb, L = plan_for_num_epochs(instance, n, budget, config, backend_factory, result.trace)
        if improves(emb, result.best):
            result.best, result.best_N, result.best_L = emb, n, L
            stale = 0
        elif throughput(result.best) > IMPROVE_TOL:
            stale += 1
            if stale >= config.gamma:
                break
        n += 1
    return result


__all__ = [
    "Budget", "SearchConfig", "SearchResult", "TraceEntry", "ts_planner",
    "plan_for_num_epochs", "improves", "throughput", "SolveStatus",
]
