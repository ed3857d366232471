"""Solver-neutral MILP assembly with adapters for HiGHS and SciPy."""

from __future__ import annotations

import enum
import logging
import math
import time
from abc import ABC, abstractmethod

import numpy as np

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    """The solver crashed or returned unusable values."""


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible_incumbent"
    INFEASIBLE = "infeasible"
    NO_INCUMBENT = "no_incumbent_at_deadline"

    @property
    def has_solution(self) -> bool:
        return self in (SolveStatus.OPTIMAL, SolveStatus.FEASIBLE)


class VarKind(enum.Enum):
    CONTINUOUS = 0
    INTEGER = 1
    BINARY = 2


class LpBackend(ABC):
    """Collects variables and linear rows, then hands them to a solver.

    Rows are ``lb <= sum(coef * var) <= ub``; use ``-inf``/``inf`` for open
    sides.  The objective is maximized unless ``maximize=False``.
    """

    name = "abstract"

    def __init__(self):
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.kind: list[VarKind] = []
        self.row_lb: list[float] = []
        self.row_ub: list[float] = []
        self._starts = [0]
        self._index: list[int] = []
        self._value: list[float] = []
        self.obj: dict[int, float] = {}
        self.maximize = True
        self.status: SolveStatus | None = None
        self.solution: np.ndarray | None = None
        self.objective_value: float | None = None
        self.solve_seconds = 0.0

    @property
    def num_vars(self) -> int:
        return len(self.lb)

    @property
    def num_rows(self) -> int:
        return len(self.row_lb)

    def add_var(self, lb: float = 0.0, ub: float = math.inf, kind: VarKind = VarKind.CONTINUOUS) -> int:
        if kind is VarKind.BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.kind.append(kind)
        return len(self.lb) - 1

    def add_row(self, terms, lb: float = -math.inf, ub: float = math.inf) -> int:
        merged: dict[int, float] = {}
        for var, coef in terms:
            merged[var] = merged.get(var, 0.0) + float(coef)
        for var, coef in merged.items():
            if coef != 0.0:
                self._index.append(var)
                self._value.append(coef)
        self._starts.append(len(self._index))
        self.row_lb.append(float(lb))
        self.row_ub.append(float(ub))
        return len(self.row_lb) - 1

    def add_le(self, terms, rhs: float) -> int:
        return self.add_row(terms, -math.inf, rhs)

    def add_eq(self, terms, rhs: float) -> int:
        return self.add_row(terms, rhs, rhs)

    def set_objective(self, terms, maximize: bool = True):
        self.obj = {}
        for var, coef in terms:
            self.obj[var] = self.obj.get(var, 0.0) + float(coef)
        self.maximize = maximize

    def csr(self):
        return (
            np.asarray(self._starts, dtype=np.int64),
            np.asarray(self._index, dtype=np.int64),
            np.asarray(self._value, dtype=float),
        )

    def cost_vector(self) -> np.ndarray:
        c = np.zeros(self.num_vars)
        for var, coef in self.obj.items():
            c[var] = coef
        return c

    def solve(self, time_limit: float) -> SolveStatus:
        """Solve within ``time_limit`` wall-clock seconds."""
        self.solution = None
        self.objective_value = None
        if time_limit <= 0:
            self.status = SolveStatus.NO_INCUMBENT
            return self.status
        t0 = time.perf_counter()
        try:
            status = self._solve(time_limit)
        except BackendError:
            raise
        except Exception as exc:  # solver crash, not an empty result
            raise BackendError(f"{self.name} failed: {exc!r}") from exc
        self.solve_seconds = time.perf_counter() - t0
        self.status = status
        log.debug("%s: %s in %.3fs (%d vars, %d rows)", self.name, status.value,
                  self.solve_seconds, self.num_vars, self.num_rows)
        return status

    @abstractmethod
    def _solve(self, time_limit: float) -> SolveStatus: ...

    def values(self) -> np.ndarray:
        if self.solution is None:
            raise BackendError("no solution available")
        return self.solution


class HighsBackend(LpBackend):
    name = "highs"

    def __init__(self, threads: int | None = None, seed: int = 0):
        super().__init__()
        self.threads = threads
        self.seed = seed

    def _solve(self, time_limit):
        import highspy

        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("time_limit", float(time_limit))
        h.setOptionValue("random_seed", int(self.seed))
        h.setOptionValue("mip_rel_gap", 0.0)
        if self.threads:
            h.setOptionValue("threads", int(self.threads))

        lp = highspy.HighsLp()
        lp.num_col_ = self.num_vars
        lp.num_row_ = self.num_rows
        sign = -1.0 if self.maximize else 1.0
        lp.col_cost_ = sign * self.cost_vector()
        lp.col_lower_ = np.asarray(self.lb)
        lp.col_upper_ = np.asarray(self.ub)
        lp.row_lower_ = np.asarray(self.row_lb)
        lp.row_upper_ = np.asarray(self.row_ub)
        starts, index, value = self.csr()
        lp.a_matrix_.format_ = highspy.MatrixFormat.kRowwise
        lp.a_matrix_.start_ = starts
        lp.a_matrix_.index_ = index
        lp.a_matrix_.value_ = value
        lp.a_matrix_.num_col_ = self.num_vars
        lp.a_matrix_.num_row_ = self.num_rows
        lp.integrality_ = [
            highspy.HighsVarType.kContinuous if k is VarKind.CONTINUOUS else highspy.HighsVarType.kInteger
            for k in self.kind
        ]
        h.passModel(lp)
        h.run()
        ms = h.getModelStatus()
        info = h.getInfo()
        if ms == highspy.HighsModelStatus.kInfeasible:
            return SolveStatus.INFEASIBLE
        has_primal = info.primal_solution_status == 2
        if not has_primal:
            if ms in (highspy.HighsModelStatus.kTimeLimit, highspy.HighsModelStatus.kInterrupt,
                      highspy.HighsModelStatus.kSolutionLimit, highspy.HighsModelStatus.kIterationLimit):
                return SolveStatus.NO_INCUMBENT
            if ms == highspy.HighsModelStatus.kUnboundedOrInfeasible:
                return SolveStatus.INFEASIBLE
            raise BackendError(f"HiGHS returned {h.modelStatusToString(ms)} without a solution")
        self.solution = np.asarray(h.getSolution().col_value, dtype=float)
        self.objective_value = float(self.cost_vector() @ self.solution)
        return SolveStatus.OPTIMAL if ms == highspy.HighsModelStatus.kOptimal else SolveStatus.FEASIBLE


class ScipyBackend(LpBackend):
    """Adapter over :func:`scipy.optimize.milp`."""

    name = "scipy"

    def _solve(self, time_limit):
        from scipy.optimize import Bounds, LinearConstraint, milp
        from scipy.sparse import csr_matrix

        c = self.cost_vector()
        sign = -1.0 if self.maximize else 1.0
        starts, index, value = self.csr()
        cons = []
        if self.num_rows:
            a = csr_matrix((value, index, starts), shape=(self.num_rows, self.num_vars))
            cons.append(LinearConstraint(a, self.row_lb, self.row_ub))
        integrality = np.array([0 if k is VarKind.CONTINUOUS else 1 for k in self.kind])
        res = milp(
            sign * c,
            constraints=cons,
            integrality=integrality,
            bounds=Bounds(self.lb, self.ub),
            options={"time_limit": float(time_limit), "mip_rel_gap": 0.0},
        )
        if res.status == 2:
            return SolveStatus.INFEASIBLE
        if res.x is None:
            if res.status == 1:
                return SolveStatus.NO_INCUMBENT
            raise BackendError(f"scipy milp status {res.status}: {res.message}")
        self.solution = np.asarray(res.x, dtype=float)
        self.objective_value = float(c @ self.solution)
        return SolveStatus.OPTIMAL if res.status == 0 else SolveStatus.FEASIBLE


BACKENDS = {"highs": HighsBackend, "scipy": ScipyBackend}


def make_backend(name: str = "highs", **kwargs) -> LpBackend:
    try:
        return BACKENDS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}") from None
