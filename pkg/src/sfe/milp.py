"""The traffic-system MILP: model assembly, solution extraction and re-checking.

Tensor layout used throughout the package:

* ``b_in`` / ``b_out``: ``(roads, N, tokens + 1)``; column 0 is the null token.
* ``pickup`` / ``deposit``: ``(machines, N, tokens)``; column ``k`` is token ``k + 1``.

Epochs are stored modulo ``N``; the flow written for epoch ``T`` lands in
``b_out[:, (T + 1) % N]``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .backends import BackendError, LpBackend, SolveStatus, VarKind
from .model import SFEInstance, Violation

log = logging.getLogger(__name__)

INT_TOL = 1e-5
RATE_TOL = 1e-6


class BuildError(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    num_epochs: int
    epoch_len: int

    @property
    def cycle_len(self) -> int:
        return self.num_epochs * self.epoch_len

    def check(self, instance: SFEInstance):
        if self.num_epochs < 1 or self.epoch_len < 1:
            raise BuildError(f"N and L must be >= 1, got N={self.num_epochs} L={self.epoch_len}")
        if self.epoch_len < instance.max_road_len + 1:
            raise BuildError(
                f"epoch length {self.epoch_len} is below the traversal minimum {instance.max_road_len + 1}"
            )


def queue_bound(waiting_on_entries: int, exit_len: int, entering_exit: int) -> int:
    """Worst-case timesteps for an agent queued at a junction to reach its spot on an exit road.

    ``waiting_on_entries`` agents wait at the heads of the junction's entry
    roads, ``entering_exit`` agents enter the exit road this epoch.
    """
    return waiting_on_entries + exit_len - entering_exit + 1


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TrafficSystemEmbedding:
    assign: np.ndarray  # (M, P) 0/1
    rate: np.ndarray  # (M, P) of Fraction, runs per timestep
    b_in: np.ndarray
    b_out: np.ndarray
    pickup: np.ndarray
    deposit: np.ndarray
    hyper: HyperParams
    objective_value: Fraction

    def __post_init__(self):
        for name in ("assign", "rate", "b_in", "b_out", "pickup", "deposit"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def N(self) -> int:
        return self.hyper.num_epochs

    @property
    def L(self) -> int:
        return self.hyper.epoch_len

    @property
    def agents_used(self) -> int:
        return int(self.b_out[:, 0, :].sum())

    def __eq__(self, other):
        if not isinstance(other, TrafficSystemEmbedding):
            return NotImplemented
        return (
            self.hyper == other.hyper
            and self.objective_value == other.objective_value
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("assign", "rate", "b_in", "b_out", "pickup", "deposit")
            )
        )


def zero_embedding(instance: SFEInstance, hyper: HyperParams) -> TrafficSystemEmbedding:
    M, P = len(instance.machines), len(instance.procedure.processes)
    R, T = len(instance.roads), instance.num_tokens
    N = hyper.num_epochs
    rate = np.full((M, P), Fraction(0), dtype=object)
    return TrafficSystemEmbedding(
        np.zeros((M, P), dtype=int),
        rate,
        np.zeros((R, N, T + 1), dtype=int),
        np.zeros((R, N, T + 1), dtype=int),
        np.zeros((M, N, T), dtype=int),
        np.zeros((M, N, T), dtype=int),
        hyper,
        Fraction(0),
    )


# -- model assembly ----------------------------------------------------------


@dataclass
class TsMilp:
    """Handle to an assembled model and its variable index tensors."""

    instance: SFEInstance
    hyper: HyperParams
    backend: LpBackend
    x: np.ndarray
    r: np.ndarray
    b_in: np.ndarray
    b_out: np.ndarray
    pk: np.ndarray
    dp: np.ndarray

    def counts(self) -> dict[str, int]:
        return {k: int(getattr(self, k).size) for k in ("x", "r", "b_in", "b_out", "pk", "dp")}


def build_ts_milp(instance: SFEInstance, hyper: HyperParams, backend: LpBackend) -> TsMilp:
    hyper.check(instance)
    N, L = hyper.num_epochs, hyper.epoch_len
    NL = N * L
    procs = instance.procedure.processes
    machines = instance.machines
    roads = instance.roads
    M, P, R, T = len(machines), len(procs), len(roads), instance.num_tokens
    bk = backend

    x = np.empty((M, P), dtype=np.int64)
    r = np.empty((M, P), dtype=np.int64)
    for m, mach in enumerate(machines):
        for p in range(P):
            supported = p in mach.supported
            # C2 as a bound: unsupported processes are fixed off.
            x[m, p] = bk.add_var(0, 1 if supported else 0, VarKind.BINARY)
    for m, mach in enumerate(machines):
        for p in range(P):
            # C3 as a bound.
            ub = 1.0 / mach.supported[p] if p in mach.supported else 0.0
            r[m, p] = bk.add_var(0, ub, VarKind.CONTINUOUS)

    b_in = np.empty((R, N, T + 1), dtype=np.int64)
    b_out = np.empty((R, N, T + 1), dtype=np.int64)
    for arr in (b_in, b_out):
        for rd in roads:
            for e in range(N):
                for k in range(T + 1):
                    arr[rd.id, e, k] = bk.add_var(0, rd.length, VarKind.INTEGER)
    pk = np.empty((M, N, T), dtype=np.int64)
    dp = np.empty((M, N, T), dtype=np.int64)
    for arr, closed in ((pk, [mach.output_cell is None for mach in machines]),
                        (dp, [mach.input_cell is None for mach in machines])):
        for m in range(M):
            for e in range(N):
                for k in range(T):
                    arr[m, e, k] = bk.add_var(0, 0 if closed[m] else math.inf, VarKind.INTEGER)

    # C1
    for m in range(M):
        bk.add_le([(x[m, p], 1) for p in range(P)], 1)
    # C4
    for m in range(M):
        for p in range(P):
            bk.add_le([(r[m, p], 1), (x[m, p], -1)], 0)
    # C5 / C6
    for m, mach in enumerate(machines):
        for k in range(T):
            tok = k + 1
            if not mach.is_sink:
                terms = [(pk[m, e, k], 1) for e in range(N)]
                terms += [(r[m, p], -procs[p].num_out(tok) * NL) for p in range(P) if procs[p].num_out(tok)]
                bk.add_eq(terms, 0)
            if not mach.is_source:
                terms = [(dp[m, e, k], 1) for e in range(N)]
                terms += [(r[m, p], -procs[p].num_in(tok) * NL) for p in range(P) if procs[p].num_in(tok)]
                bk.add_eq(terms, 0)
    # C7 / C8
    for rd in roads:
        for e in range(N):
            nxt = (e + 1) % N
            for k in range(T):
                terms = [(b_out[rd.id, nxt, k + 1], 1), (b_in[rd.id, e, k + 1], -1)]
                terms += [(dp[m, e, k], 1) for m in rd.inputs_on]
                terms += [(pk[m, e, k], -1) for m in rd.outputs_on]
                bk.add_eq(terms, 0)
            terms = [(b_out[rd.id, nxt, 0], 1), (b_in[rd.id, e, 0], -1)]
            terms += [(pk[m, e, k], 1) for m in rd.outputs_on for k in range(T)]
            terms += [(dp[m, e, k], -1) for m in rd.inputs_on for k in range(T)]
            bk.add_eq(terms, 0)
    # C9
    for j in instance.junctions:
        for e in range(N):
            for k in range(T + 1):
                terms = [(b_in[rid, e, k], 1) for rid in j.exit_roads]
                terms += [(b_out[rid, e, k], -1) for rid in j.entry_roads]
                bk.add_eq(terms, 0)
    # C10 / C11
    for rd in roads:
        for e in range(N):
            if rd.inputs_on:
                for k in range(T):
                    bk.add_le([(dp[m, e, k], 1) for m in rd.inputs_on] + [(b_in[rd.id, e, k + 1], -1)], 0)
            if rd.outputs_on:
                terms = [(pk[m, e, k], 1) for m in rd.outputs_on for k in range(T)]
                bk.add_le(terms + [(b_in[rd.id, e, 0], -1)], 0)
    # C12
    bk.add_le([(v, 1) for v in b_out[:, 0, :].ravel()], instance.agents)
    # C13
    for rd in roads:
        for e in range(N):
            terms = [(v, 1) for v in b_in[rd.id, e]] + [(v, 1) for v in b_out[rd.id, e]]
            bk.add_le(terms, rd.length)
    # C14: L >= queue_bound(...), rearranged with the variables on the left
    for j in instance.junctions:
        for rid in j.exit_roads:
            slack = L - roads[rid].length - 1
            for e in range(N):
                terms = [(v, 1) for q in j.entry_roads for v in b_out[q, e]]
                terms += [(v, -1) for v in b_in[rid, e]]
                bk.add_le(terms, slack)

    p_out = instance.procedure.output_index
    bk.set_objective([(r[m, p_out], 1) for m in range(M)], maximize=True)
    return TsMilp(instance, hyper, bk, x, r, b_in, b_out, pk, dp)


# -- extraction --------------------------------------------------------------


def _round_ints(values: np.ndarray, idx: np.ndarray) -> np.ndarray:
    raw = values[idx]
    out = np.rint(raw)
    bad = np.abs(raw - out) > INT_TOL
    if bad.any():
        raise BackendError(f"non-integral value {raw[bad][0]!r} for an integer variable")
    out[out == 0] = 0  # drop negative zeros
    return out.astype(int)


def exact_rates(instance: SFEInstance, hyper: HyperParams, assign, pickup, deposit) -> np.ndarray:
    """Rates implied by the pickup/deposit totals for each assigned machine."""
    procs = instance.procedure.processes
    NL = hyper.cycle_len
    M, P = assign.shape
    rate = np.full((M, P), Fraction(0), dtype=object)
    for m in range(M):
        for p in range(P):
            if not assign[m, p]:
                continue
            proc = procs[p]
            if proc.outputs:
                tok, cnt = next(iter(sorted(proc.outputs.items())))
                rate[m, p] = Fraction(int(pickup[m, :, tok - 1].sum()), cnt * NL)
            else:
                tok, cnt = next(iter(sorted(proc.inputs.items())))
                rate[m, p] = Fraction(int(deposit[m, :, tok - 1].sum()), cnt * NL)
    return rate


def extract_embedding(model: TsMilp) -> TrafficSystemEmbedding:
    vals = model.backend.values()
    inst = model.instance
    assign = _round_ints(vals, model.x)
    b_in = _round_ints(vals, model.b_in)
    b_out = _round_ints(vals, model.b_out)
    pickup = _round_ints(vals, model.pk)
    deposit = _round_ints(vals, model.dp)
    rate = exact_rates(inst, model.hyper, assign, pickup, deposit)
    # rates from the solver agree with the integer tensors up to tolerance
    solver_rate = vals[model.r]
    if np.abs(solver_rate - rate.astype(float)).max(initial=0.0) > 1e-4:
        raise BackendError("solver rates disagree with pickup/deposit totals")
    p_out = inst.procedure.output_index
    objective = sum(rate[:, p_out], Fraction(0))
    return TrafficSystemEmbedding(assign, rate, b_in, b_out, pickup, deposit, model.hyper, objective)


def solve_ts_milp(instance: SFEInstance, hyper: HyperParams, backend: LpBackend, deadline: float):
    """Build and solve; return an embedding, or ``None`` when no solution exists in time.

    ``deadline`` is a wall-clock duration in seconds.
    """
    model = build_ts_milp(instance, hyper, backend)
    status = backend.solve(deadline)
    if not status.has_solution:
        return None
    emb = extract_embedding(model)
    problems = check_embedding(instance, emb)
    if problems:
        raise BackendError(f"solver solution fails re-check: {problems[:3]}")
    return emb


# -- independent re-check ----------------------------------------------------


def check_embedding(instance: SFEInstance, emb: TrafficSystemEmbedding) -> list[Violation]:
    """Re-evaluate every constraint row of the MILP arithmetically."""
    procs = instance.procedure.processes
    machines = instance.machines
    roads = instance.roads
    M, P, R, T = len(machines), len(procs), len(roads), instance.num_tokens
    N, L = emb.N, emb.L
    NL = N * L
    out: list[Violation] = []

    shapes = {
        "assign": (M, P), "rate": (M, P), "b_in": (R, N, T + 1),
        "b_out": (R, N, T + 1), "pickup": (M, N, T), "deposit": (M, N, T),
    }
    for name, shape in shapes.items():
        if getattr(emb, name).shape != shape:
            return [Violation("Shape", f"{name} has shape {getattr(emb, name).shape}, expected {shape}")]
    for name in ("b_in", "b_out", "pickup", "deposit"):
        if (getattr(emb, name) < 0).any():
            out.append(Violation("Domain", f"{name} has negative entries"))
    if not np.isin(emb.assign, (0, 1)).all():
        out.append(Violation("Domain", "assign is not binary"))
    rate = emb.rate
    A, bi, bo, pk, dp = emb.assign, emb.b_in, emb.b_out, emb.pickup, emb.deposit

    for m, mach in enumerate(machines):
        if A[m].sum() > 1:
            out.append(Violation("C1", f"machine {m} assigned {int(A[m].sum())} processes"))
        for p in range(P):
            if p not in mach.supported and A[m, p]:
                out.append(Violation("C2", f"machine {m} assigned unsupported process {p}"))
            if rate[m, p] < -RATE_TOL:
                out.append(Violation("Domain", f"rate[{m},{p}] negative"))
            if p in mach.supported and rate[m, p] > Fraction(1, mach.supported[p]) + RATE_TOL:
                out.append(Violation("C3", f"rate[{m},{p}]={rate[m, p]} exceeds 1/{mach.supported[p]}"))
            if rate[m, p] - A[m, p] > RATE_TOL:
                out.append(Violation("C4", f"machine {m} runs process {p} at rate {rate[m, p]} without assignment"))
        if mach.output_cell is None and pk[m].any():
            out.append(Violation("Domain", f"machine {m} has pickups but no output cell"))
        if mach.input_cell is None and dp[m].any():
            out.append(Violation("Domain", f"machine {m} has deposits but no input cell"))
        for k in range(T):
            tok = k + 1
            if not mach.is_sink:
                want = sum((rate[m, p] * procs[p].num_out(tok) * NL for p in range(P)), Fraction(0))
                if abs(int(pk[m, :, k].sum()) - want) > RATE_TOL:
                    out.append(Violation("C5", f"machine {m} token {tok}: pickups {int(pk[m, :, k].sum())} != {want}"))
            if not mach.is_source:
                want = sum((rate[m, p] * procs[p].num_in(tok) * NL for p in range(P)), Fraction(0))
                if abs(int(dp[m, :, k].sum()) - want) > RATE_TOL:
                    out.append(Violation("C6", f"machine {m} token {tok}: deposits {int(dp[m, :, k].sum())} != {want}"))

    for rd in roads:
        I, O = list(rd.inputs_on), list(rd.outputs_on)
        for e in range(N):
            nxt = (e + 1) % N
            for k in range(T):
                lhs = bo[rd.id, nxt, k + 1]
                rhs = bi[rd.id, e, k + 1] - dp[I, e, k].sum() + pk[O, e, k].sum()
                if lhs != rhs:
                    out.append(Violation("C7", f"road {rd.id} epoch {e} token {k + 1}: {lhs} != {rhs}"))
                if dp[I, e, k].sum() > bi[rd.id, e, k + 1]:
                    out.append(Violation("C10", f"road {rd.id} epoch {e} token {k + 1}"))
            lhs = bo[rd.id, nxt, 0]
            rhs = bi[rd.id, e, 0] - pk[O, e, :].sum() + dp[I, e, :].sum()
            if lhs != rhs:
                out.append(Violation("C8", f"road {rd.id} epoch {e}: {lhs} != {rhs}"))
            if pk[O, e, :].sum() > bi[rd.id, e, 0]:
                out.append(Violation("C11", f"road {rd.id} epoch {e}"))
            if bi[rd.id, e].sum() + bo[rd.id, e].sum() > rd.length:
                out.append(Violation("C13", f"road {rd.id} epoch {e}"))

    for j in instance.junctions:
        for e in range(N):
            for k in range(T + 1):
                lhs = bi[list(j.exit_roads), e, k].sum()
                rhs = bo[list(j.entry_roads), e, k].sum()
                if lhs != rhs:
                    out.append(Violation("C9", f"junction {j.id} epoch {e} token {k}: {lhs} != {rhs}"))
            waiting = bo[list(j.entry_roads), e, :].sum()
            for rid in j.exit_roads:
                need = queue_bound(int(waiting), roads[rid].length, int(bi[rid, e].sum()))
                if L < need:
                    out.append(Violation("C14", f"junction {j.id} exit road {rid} epoch {e}: L={L} < {need}"))

    if bo[:, 0, :].sum() > instance.agents:
        out.append(Violation("C12", f"{int(bo[:, 0, :].sum())} agents used, {instance.agents} available"))
    p_out = instance.procedure.output_index
    total = sum(rate[:, p_out], Fraction(0))
    if abs(total - emb.objective_value) > RATE_TOL:
        out.append(Violation("Objective", f"objective {emb.objective_value} != sum of output rates {total}"))
    return out


# -- documents ---------------------------------------------------------------


def embedding_to_dict(instance: SFEInstance, emb: TrafficSystemEmbedding) -> dict:
    proc = instance.procedure
    tname = proc.token_name
    T = instance.num_tokens
    mids = [m.id for m in instance.machines]

    def roadmap(arr):
        return {
            str(rd.id): {str(e): {tname(k): int(arr[rd.id, e, k]) for k in range(T + 1)} for e in range(emb.N)}
            for rd in instance.roads
        }

    def machmap(arr):
        return {
            mid: {str(e): {tname(k + 1): int(arr[m, e, k]) for k in range(T)} for e in range(emb.N)}
            for m, mid in enumerate(mids)
        }

    assign = {}
    for m, mid in enumerate(mids):
        ps = np.flatnonzero(emb.assign[m])
        assign[mid] = proc.processes[int(ps[0])].id if len(ps) else None
    rate = {
        mid: {
            proc.processes[p].id: [emb.rate[m, p].numerator, emb.rate[m, p].denominator]
            for p in sorted(instance.machines[m].supported)
        }
        for m, mid in enumerate(mids)
    }
    obj = emb.objective_value
    return {
        "hyper": {"N": emb.N, "L": emb.L},
        "assign": assign,
        "rate": rate,
        "b_in": roadmap(emb.b_in),
        "b_out": roadmap(emb.b_out),
        "pickup": machmap(emb.pickup),
        "deposit": machmap(emb.deposit),
        "objective": f"{float(obj):.12f}",
        "objective_fraction": [obj.numerator, obj.denominator],
    }


def dump_embedding(instance: SFEInstance, emb: TrafficSystemEmbedding) -> str:
    return json.dumps(embedding_to_dict(instance, emb), indent=1)


def embedding_from_dict(instance: SFEInstance, doc: dict) -> TrafficSystemEmbedding:
    proc = instance.procedure
    T = instance.num_tokens
    tok_index = {proc.token_name(k): k for k in range(T + 1)}
    mindex = {m.id: i for i, m in enumerate(instance.machines)}
    hyper = HyperParams(int(doc["hyper"]["N"]), int(doc["hyper"]["L"]))
    N = hyper.num_epochs
    M, P, R = len(instance.machines), len(proc.processes), len(instance.roads)

    assign = np.zeros((M, P), dtype=int)
    for mid, pid in doc["assign"].items():
        if pid is not None:
            assign[mindex[mid], proc.process_index(pid)] = 1
    rate = np.full((M, P), Fraction(0), dtype=object)
    for mid, per in doc["rate"].items():
        for pid, (num, den) in per.items():
            rate[mindex[mid], proc.process_index(pid)] = Fraction(num, den)

    def roadarr(d):
        arr = np.zeros((R, N, T + 1), dtype=int)
        for rid, per_e in d.items():
            for e, per_t in per_e.items():
                for name, v in per_t.items():
                    arr[int(rid), int(e), tok_index[name]] = v
        return arr

    def macharr(d):
        arr = np.zeros((M, N, T), dtype=int)
        for mid, per_e in d.items():
            for e, per_t in per_e.items():
                for name, v in per_t.items():
                    arr[mindex[mid], int(e), tok_index[name] - 1] = v
        return arr

    if "objective_fraction" in doc:
        objective = Fraction(*doc["objective_fraction"])
    else:
        objective = Fraction(doc["objective"]).limit_denominator(10**9)
    return TrafficSystemEmbedding(
        assign, rate, roadarr(doc["b_in"]), roadarr(doc["b_out"]),
        macharr(doc["pickup"]), macharr(doc["deposit"]), hyper, objective,
    )


def load_embedding(instance: SFEInstance, path) -> TrafficSystemEmbedding:
    with open(path, encoding="utf-8") as fh:
        return embedding_from_dict(instance, json.load(fh))


__all__ = [
    "BuildError", "HyperParams", "queue_bound", "TrafficSystemEmbedding", "TsMilp", "build_ts_milp",
    "solve_ts_milp", "check_embedding", "zero_embedding", "embedding_to_dict",
    "embedding_from_dict", "dump_embedding", "load_embedding", "SolveStatus",
]
