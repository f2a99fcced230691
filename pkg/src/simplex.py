"""
Bounded-variable primal simplex for the LP relaxations.

Dense revised tableau over the column layout [x | s | t]: structural
columns x, one slack s_r = a_r . x per row (bounded by the row side), and
artificial columns t added only where the start basis is out of bounds.
Phase 1 drives the artificials to zero, phase 2 optimizes the objective.
Warm starts reuse an earlier basis with rows appended.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from model import INF, Problem
from linearize import mccormick

logger = logging.getLogger(__name__)

EPS_FEAS = 1e-9
EPS_BND = 1e-9
EPS_OPT = 1e-9
EPS_PIVOT = 1e-9
EPS_PHASE1 = 1e-8
DEGENERATE_STEP = 1e-12
BLAND_AFTER = 50
REFACTOR_EVERY = 30


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class LpRow:
    """coeffs . x <= rhs, or == rhs when is_equality."""
    name: str
    coeffs: Mapping[int, float]
    rhs: float
    is_equality: bool = False
    origin: str = "row"


@dataclass(frozen=True, eq=False)
class LpInstance:
    n_cols: int
    lb: Tuple[float, ...]
    ub: Tuple[float, ...]
    objective: Tuple[float, ...]
    rows: Tuple[LpRow, ...] = ()
    col_names: Tuple[str, ...] = ()

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def with_rows(self, rows: Sequence[LpRow]) -> "LpInstance":
        return replace(self, rows=self.rows + tuple(rows))

    def with_bounds(self, lb: Sequence[float], ub: Sequence[float]) -> "LpInstance":
        return replace(self, lb=tuple(lb), ub=tuple(ub))

    def dense_rows(self) -> np.ndarray:
        matrix = np.zeros((self.n_rows, self.n_cols))
        for r, row in enumerate(self.rows):
            for k, coef in row.coeffs.items():
                matrix[r, k] += coef
        return matrix


@dataclass(frozen=True)
class LpBasis:
    """Basic columns (structural k, or n_cols + r for the slack of row r)
    and the nonbasic columns resting at their upper bound."""
    n_cols: int
    n_rows: int
    basic: Tuple[int, ...]
    at_upper: frozenset = frozenset()


@dataclass
class LpSolution:
    status: LpStatus
    x_star: np.ndarray
    objective: float
    iterations: int
    at_lower: np.ndarray
    at_upper: np.ndarray
    basis: Optional[LpBasis] = None
    warm_started: bool = False

    @property
    def is_optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL

    @property
    def interior(self) -> np.ndarray:
        return ~(self.at_lower | self.at_upper)


def lp_rows_from_problem(problem: Problem) -> List[LpRow]:
    """LP rows for the linear rows of a problem; ranged rows split into two sides."""
    rows = []
    for row in problem.rows:
        if row.is_equality:
            rows.append(LpRow(row.name, dict(row.coeffs), row.rhs, True))
            continue
        for side in row.one_sided():
            suffix = "" if side.side.value == "<=" else "_ge"
            rows.append(LpRow(row.name + suffix, dict(side.coeffs), side.rhs))
    return rows


def mccormick_lp_rows(problem: Problem, lb: Sequence[float], ub: Sequence[float]) -> List[LpRow]:
    """McCormick envelope rows for every relation at the given bounds."""
    rows = []
    for relation in problem.relations:
        for mc in mccormick(relation, lb, ub):
            rows.append(LpRow(mc.name, dict(mc.coeffs), mc.rhs, False, "mccormick"))
    return rows


def lp_from_problem(problem: Problem, include_mccormick: bool = True,
                    lb: Optional[Sequence[float]] = None, ub: Optional[Sequence[float]] = None) -> LpInstance:
    """LP relaxation: every row plus, optionally, McCormick rows per relation.

    lb/ub override the problem's variable bounds (node-local bounds).
    """
    base_lb, base_ub = problem.bounds()
    lb = list(base_lb if lb is None else lb)
    ub = list(base_ub if ub is None else ub)
    rows = lp_rows_from_problem(problem)
    if include_mccormick:
        rows.extend(mccormick_lp_rows(problem, lb, ub))
    objective = [0.0] * problem.n_vars
    for k, coef in problem.objective.items():
        objective[k] = coef
    return LpInstance(
        n_cols=problem.n_vars,
        lb=tuple(lb),
        ub=tuple(ub),
        objective=tuple(objective),
        rows=tuple(rows),
        col_names=tuple(v.name for v in problem.variables),
    )


class _BoundedSimplex:
    """One solve's state. Columns: structurals, slacks, then artificials."""

    def __init__(self, lp: LpInstance, max_iterations: int):
        n, m = lp.n_cols, lp.n_rows
        self.n, self.m = n, m
        A = lp.dense_rows()
        self.M = np.hstack([A, -np.eye(m)]) if m else np.zeros((0, n))
        self.lb = np.array(list(lp.lb) + [r.rhs if r.is_equality else -INF for r in lp.rows], dtype=float)
        self.ub = np.array(list(lp.ub) + [r.rhs for r in lp.rows], dtype=float)
        self.cost = np.array(list(lp.objective) + [0.0] * m, dtype=float)
        self.n_real = n + m
        self.twins: List[int] = []
        self.x = np.zeros(n + m)
        self.basis: List[int] = []
        self.is_basic = np.zeros(n + m, dtype=bool)
        self.T = np.zeros((m, n + m))
        self.iterations = 0
        self.max_iterations = max_iterations
        self.since_refactor = 0

    # -- setup ------------------------------------------------------------

    def _rest_value(self, col: int, prefer_upper: bool) -> float:
        lo, hi = self.lb[col], self.ub[col]
        if prefer_upper and math.isfinite(hi):
            return hi
        if math.isfinite(lo):
            return lo
        if math.isfinite(hi):
            return hi
        return 0.0

    def start(self, basic: Sequence[int], at_upper=frozenset()) -> bool:
        """Install a basis; False if it is singular."""
        self.basis = list(basic)
        self.is_basic[:] = False
        self.is_basic[self.basis] = True
        for col in range(self.n_real):
            if not self.is_basic[col]:
                self.x[col] = self._rest_value(col, col in at_upper)
        if not self._refactor():
            return False
        self._compute_basics()
        return True

    def _refactor(self) -> bool:
        if self.m == 0:
            self.T = np.zeros((0, self.M.shape[1]))
            return True
        B = self.M[:, self.basis]
        try:
            if np.linalg.cond(B) > 1e12:
                return False
            self.T = np.linalg.solve(B, self.M)
        except np.linalg.LinAlgError:
            return False
        self.since_refactor = 0
        return True

    def _compute_basics(self):
        if self.m == 0:
            return
        nonbasic_x = np.where(self.is_basic, 0.0, self.x)
        self.x[self.basis] = -(self.T @ nonbasic_x)

    def add_artificials(self) -> int:
        """Swap every out-of-bounds basic for an artificial twin; returns the count."""
        added = 0
        for pos, col in enumerate(list(self.basis)):
            value = self.x[col]
            if value > self.ub[col] + EPS_FEAS:
                target = self.ub[col]
            elif value < self.lb[col] - EPS_FEAS:
                target = self.lb[col]
            else:
                continue
            direction = 1.0 if value > target else -1.0
            column = direction * self.M[:, col]
            self.M = np.hstack([self.M, column[:, None]])
            self.lb = np.append(self.lb, 0.0)
            self.ub = np.append(self.ub, INF)
            self.cost = np.append(self.cost, 0.0)
            self.twins.append(col)
            self.x = np.append(self.x, abs(value - target))
            self.is_basic = np.append(self.is_basic, True)
            self.is_basic[col] = False
            self.x[col] = target
            self.basis[pos] = self.M.shape[1] - 1
            added += 1
        if added:
            self._refactor()
            self._compute_basics()
        return added

    # -- iteration --------------------------------------------------------

    def _price(self, cost: np.ndarray, bland: bool) -> Optional[Tuple[int, float]]:
        if self.m:
            reduced = cost - cost[self.basis] @ self.T
        else:
            reduced = cost.copy()
        best = None
        for col in range(self.M.shape[1]):
            if self.is_basic[col] or self.lb[col] == self.ub[col]:
                continue
            d = reduced[col]
            value = self.x[col]
            can_up = value < self.ub[col] and d < -EPS_OPT
            can_down = value > self.lb[col] and d > EPS_OPT
            if not (can_up or can_down):
                continue
            direction = 1.0 if can_up else -1.0
            if bland:
                return col, direction
            if best is None or abs(d) > best[2] + 1e-15:
                best = (col, direction, abs(d))
        if best is None:
            return None
        return best[0], best[1]

    def _ratio(self, col: int, direction: float, bland: bool):
        """Largest step along the entering column; (step, leaving position or None)."""
        best = INF
        leave = None
        leave_key = None
        for pos, bcol in enumerate(self.basis):
            rate = -direction * self.T[pos, col]
            if rate > EPS_PIVOT and math.isfinite(self.ub[bcol]):
                limit = (self.ub[bcol] - self.x[bcol]) / rate
            elif rate < -EPS_PIVOT and math.isfinite(self.lb[bcol]):
                limit = (self.lb[bcol] - self.x[bcol]) / rate
            else:
                continue
            limit = max(limit, 0.0)
            key = (bcol,) if bland else (-abs(rate), bcol)
            if leave is None or limit < best - 1e-12 or (abs(limit - best) <= 1e-12 and key < leave_key):
                best, leave, leave_key = limit, pos, key

        flip = INF
        if math.isfinite(self.lb[col]) and math.isfinite(self.ub[col]):
            flip = self.ub[col] - self.lb[col]
        if leave is None or flip < best:
            return flip, None
        return best, leave

    def _pivot(self, pos: int, col: int):
        pivot = self.T[pos, col]
        self.T[pos, :] /= pivot
        column = self.T[:, col].copy()
        column[pos] = 0.0
        self.T -= np.outer(column, self.T[pos, :])
        self.since_refactor += 1

    def run(self, cost: np.ndarray) -> LpStatus:
        degenerate = 0
        bland = False
        while True:
            entering = self._price(cost, bland)
            if entering is None:
                return LpStatus.OPTIMAL
            if self.iterations >= self.max_iterations:
                return LpStatus.ITERATION_LIMIT
            col, direction = entering
            step, leave = self._ratio(col, direction, bland)
            if math.isinf(step):
                return LpStatus.UNBOUNDED
            self.iterations += 1
            if leave is None:
                self.x[col] = self.ub[col] if direction > 0 else self.lb[col]
            else:
                bcol = self.basis[leave]
                rate = -direction * self.T[leave, col]
                self.x[col] += direction * step
                self._pivot(leave, col)
                self.is_basic[bcol] = False
                self.is_basic[col] = True
                self.basis[leave] = col
                self.x[bcol] = self.ub[bcol] if rate > 0 else self.lb[bcol]
                if self.since_refactor >= REFACTOR_EVERY:
                    self._refactor()
            self._compute_basics()

            if step <= DEGENERATE_STEP:
                degenerate += 1
                if degenerate >= BLAND_AFTER and not bland:
                    logger.debug("Switching to Bland's rule after %d degenerate pivots", degenerate)
                    bland = True
            else:
                degenerate = 0
                bland = False

    def retire_artificials(self):
        """Fix artificials at zero and pivot basic ones out where possible."""
        for col in range(self.n_real, self.M.shape[1]):
            self.ub[col] = 0.0
            if not self.is_basic[col]:
                self.x[col] = 0.0
        for pos, col in enumerate(list(self.basis)):
            if col < self.n_real:
                continue
            row = np.abs(self.T[pos, : self.n_real])
            row[self.is_basic[: self.n_real]] = 0.0
            target = int(np.argmax(row)) if row.size else 0
            if row.size == 0 or row[target] <= EPS_PIVOT:
                continue
            self._pivot(pos, target)
            self.is_basic[col] = False
            self.is_basic[target] = True
            self.basis[pos] = target
            self.x[col] = 0.0
        self._refactor()
        self._compute_basics()

    def export_basis(self) -> LpBasis:
        # a basic artificial is reported as the column it stands in for
        basic = tuple(int(self.twins[col - self.n_real]) if col >= self.n_real else int(col)
                      for col in self.basis)
        at_upper = frozenset(
            int(c) for c in range(self.n_real)
            if not self.is_basic[c] and self.lb[c] != self.ub[c] and self.x[c] == self.ub[c]
        )
        return LpBasis(self.n, self.m, basic, at_upper)


def _warm_layout(warm: LpBasis, lp: LpInstance) -> Optional[Tuple[List[int], frozenset]]:
    """Extend a basis of lp's first warm.n_rows rows with the slacks of the rest."""
    n, m = lp.n_cols, lp.n_rows
    if warm.n_cols != n or warm.n_rows > m or len(warm.basic) != warm.n_rows:
        return None
    if any(col >= n + warm.n_rows for col in warm.basic) or len(set(warm.basic)) != len(warm.basic):
        return None
    basic = list(warm.basic) + [n + r for r in range(warm.n_rows, m)]
    return basic, warm.at_upper


def solve_lp(lp: LpInstance, warm: Optional[LpBasis] = None, added_rows: Optional[Sequence[LpRow]] = None,
             max_iterations: Optional[int] = None) -> LpSolution:
    """Solve min c.x over the LP, optionally warm-started.

    added_rows are appended to lp before solving; warm must describe a basis
    of lp without them.
    """
    if added_rows:
        lp = lp.with_rows(added_rows)
    n, m = lp.n_cols, lp.n_rows
    if max_iterations is None:
        max_iterations = 100 * (m + n)
    solver = _BoundedSimplex(lp, max_iterations)

    warm_used = False
    if warm is not None:
        layout = _warm_layout(warm, lp)
        if layout is not None and solver.start(*layout):
            warm_used = True
        else:
            logger.warning("Warm basis unusable (%s); cold start", "singular" if layout else "dimension mismatch")
    if not warm_used:
        solver.start([n + r for r in range(m)])

    status = LpStatus.OPTIMAL
    n_artificial = solver.add_artificials()
    if n_artificial:
        phase1 = np.zeros(solver.M.shape[1])
        phase1[solver.n_real:] = 1.0
        status = solver.run(phase1)
        infeasibility = float(solver.x[solver.n_real:].sum())
        logger.debug("Phase 1 finished: %s, infeasibility %.3g, %d iterations",
                     status.value, infeasibility, solver.iterations)
        if status is LpStatus.OPTIMAL and infeasibility > EPS_PHASE1:
            status = LpStatus.INFEASIBLE
        elif status is LpStatus.OPTIMAL:
            solver.retire_artificials()
    if status is LpStatus.OPTIMAL:
        cost = np.zeros(solver.M.shape[1])
        cost[:n] = lp.objective
        status = solver.run(cost)

    x = solver.x[:n].copy()
    lb = np.array(lp.lb, dtype=float)
    ub = np.array(lp.ub, dtype=float)
    if status is LpStatus.OPTIMAL:
        # snap values that drifted within tolerance of a bound
        x = np.where((x < lb) & (x > lb - EPS_FEAS), lb, x)
        x = np.where((x > ub) & (x < ub + EPS_FEAS), ub, x)
    at_lower = np.isfinite(lb) & (np.abs(x - lb) <= EPS_BND)
    at_upper = np.isfinite(ub) & (np.abs(x - ub) <= EPS_BND)
    objective = float(np.dot(lp.objective, x)) if status is LpStatus.OPTIMAL else math.nan
    basis = solver.export_basis() if status is LpStatus.OPTIMAL else None
    logger.debug("LP %s: %d rows, %d cols, obj %s, %d iterations%s", status.value, m, n, objective,
                 solver.iterations, " (warm)" if warm_used else "")
    return LpSolution(status, x, objective, solver.iterations, at_lower, at_upper, basis, warm_used)
