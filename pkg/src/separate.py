"""
RLT cut separation.

A row side a.x <= b is multiplied by a bound factor (x_u - lb_u) or
(ub_u - x_u) and every product term of the result is linearized. The
baseline driver tries every row side with every product variable; the
marking driver only tries the (row, factor) combinations whose product
substitutions increase the cut violation. Projection filtering checks the
cut on the system restricted to variables strictly between their bounds
before building it in full.

Hand check on min -w, w = x1*x2, x1 + x2 <= 1, all in [0, 1]:
the McCormick LP stops at x* = (1/2, 1/2, 1/2) with bound -1/2. Row
x1 + x2 <= 1 times (x2 - 0) gives x1*x2 + x2^2 <= x2. Here w replaces
x1*x2. The square has coefficient +1 in a <= row, so it is underestimated
by the tangent at x2* = 1/2 (x2^2 >= x2 - 1/4), giving
w + x2 - 1/4 <= x2, i.e. w <= 1/4. It is violated by 1/4 at x*, and the
next LP bound is -1/4.
"""

import bisect
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.sparse import csc_matrix

from linearize import (
    AffineExpr,
    CliqueStore,
    LinearizationError,
    TermContext,
    TermKind,
    linearize_term,
    mine_cliques,
)
from model import OneSidedRow, Problem, ProductIndex, Sense, build_product_index
from simplex import LpRow, LpSolution

logger = logging.getLogger(__name__)

MARK_LT = 1
MARK_GT = 2
MARK_BOTH = 3

EPS_PROD = 1e-9
EPS_CUT = 1e-6


class Direction(str, Enum):
    LOWER = "lower"
    UPPER = "upper"


class Mode(str, Enum):
    BASELINE = "baseline"
    MARKING = "marking"


class MarkTable:
    """Row marks keyed by (row id, factor variable), stored as sorted parallel arrays."""

    def __init__(self, marks: Dict[Tuple[int, int], int]):
        keys = sorted(marks)
        self.row_idcs = np.array([r for r, _ in keys], dtype=np.int64)
        self.factors = np.array([u for _, u in keys], dtype=np.int64)
        self.row_marks = np.array([marks[k] for k in keys], dtype=np.int8)
        self._keys = keys

    def mark(self, row: int, factor: int) -> int:
        pos = bisect.bisect_left(self._keys, (row, factor))
        if pos < len(self._keys) and self._keys[pos] == (row, factor):
            return int(self.row_marks[pos])
        return 0

    def entries(self) -> List[Tuple[int, int, int]]:
        return [(int(r), int(u), int(m)) for r, u, m in zip(self.row_idcs, self.factors, self.row_marks)]

    def marked_rows(self) -> Set[int]:
        return set(int(r) for r in self.row_idcs)

    def __len__(self) -> int:
        return len(self._keys)


@dataclass(frozen=True)
class CutProvenance:
    row_id: int
    side: Sense
    factor: int
    direction: Direction
    substitutions: Tuple[TermKind, ...] = ()
    unknown_term_count: int = 0

    @property
    def identity(self) -> Tuple[int, int, int, str]:
        return (self.row_id, 0 if self.side is Sense.LE else 1, self.factor, self.direction.value)


@dataclass
class Cut:
    """expr . x <= rhs, expr carrying no constant."""
    expr: AffineExpr
    rhs: float
    violation_at: float
    provenance: CutProvenance

    @property
    def identity(self):
        return self.provenance.identity

    def efficacy(self) -> float:
        norm = self.expr.norm()
        return math.inf if norm == 0.0 else self.violation_at / norm

    def to_lp_row(self) -> LpRow:
        p = self.provenance
        name = f"rlt_r{p.row_id}{'' if p.side is Sense.LE else 'ge'}_x{p.factor}_{p.direction.value}"
        return LpRow(name, dict(sorted(self.expr.coeffs.items())), self.rhs, False, "cut")


@dataclass
class ProjectedSystem:
    """Rows restricted to J1 (variables strictly between bounds) with adjusted rhs."""
    j1: frozenset
    j2: frozenset
    rows: Dict[Tuple[int, int], Tuple[Dict[int, float], float]] = field(default_factory=dict)


@dataclass
class SeparationStats:
    candidates_examined: int = 0
    projected_checked: int = 0
    projected_filtered: int = 0
    cuts_built: int = 0
    cuts_kept: int = 0
    failures: int = 0
    unknown_rejected: int = 0
    marks: int = 0
    seconds: float = 0.0

    def merge(self, other: "SeparationStats"):
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))


@dataclass
class SeparationResult:
    cuts: List[Cut]
    stats: SeparationStats


class SeparationContext:
    """Per-problem data shared by every separation round."""

    def __init__(self, problem: Problem, index: Optional[ProductIndex] = None,
                 cliques: Optional[CliqueStore] = None, max_unknown_terms: int = 20,
                 eps_cut: float = EPS_CUT):
        self.problem = problem
        self.index = index if index is not None else build_product_index(problem)
        self.cliques = cliques if cliques is not None else mine_cliques(problem)
        self.lb, self.ub = problem.bounds()
        self.max_unknown_terms = max_unknown_terms
        self.eps_cut = eps_cut
        self.sides: List[OneSidedRow] = list(problem.one_sided_rows())
        self.sides_by_row: Dict[int, List[OneSidedRow]] = {}
        for side in self.sides:
            self.sides_by_row.setdefault(side.row_id, []).append(side)
        self.product_vars = problem.product_vars
        n, m = problem.n_vars, len(problem.rows)
        data, rows, cols = [], [], []
        for row in problem.rows:
            for k, coef in row.coeffs.items():
                data.append(coef)
                rows.append(row.id)
                cols.append(k)
        self.columns = csc_matrix((data, (rows, cols)), shape=(m, n))

    def term_context(self, x_star) -> TermContext:
        return TermContext(self.problem, self.index, self.cliques, self.lb, self.ub, x_star)

    def column(self, var: int) -> Tuple[np.ndarray, np.ndarray]:
        start, end = self.columns.indptr[var], self.columns.indptr[var + 1]
        return self.columns.indices[start:end], self.columns.data[start:end]


def mark_rows(solution: LpSolution, ctx: SeparationContext) -> MarkTable:
    """Mark rows by the direction in which product substitutions move a cut."""
    x = solution.x_star
    marks: Dict[Tuple[int, int], int] = {}
    for relation in ctx.problem.relations:
        product = x[relation.i] * x[relation.j]
        value = relation.linear_side(x)
        if abs(product - value) <= EPS_PROD:
            continue
        orientations = [(relation.i, relation.j)]
        if relation.i != relation.j:
            orientations.append((relation.j, relation.i))
        for scanned, factor in orientations:
            rows, coefs = ctx.column(scanned)
            for r, a in zip(rows, coefs):
                key = (int(r), factor)
                if a * product < a * value:
                    marks[key] = marks.get(key, 0) | MARK_LT
                elif a * product > a * value:
                    marks[key] = marks.get(key, 0) | MARK_GT
    return MarkTable(marks)


def factor_choices(mark: int, row_sense: Sense) -> Set[Direction]:
    """Bound factors to try for a marked row side."""
    if not mark:
        return set()
    if row_sense is Sense.EQ or mark == MARK_BOTH:
        return {Direction.LOWER, Direction.UPPER}
    lower_for_le = mark == MARK_LT
    if row_sense is Sense.LE:
        return {Direction.LOWER if lower_for_le else Direction.UPPER}
    return {Direction.UPPER if lower_for_le else Direction.LOWER}


def _side_sense(side: OneSidedRow) -> Sense:
    return Sense.EQ if side.is_equality else side.side


def _factor_bound(ctx: SeparationContext, u: int, direction: Direction) -> float:
    return ctx.lb[u] if direction is Direction.LOWER else ctx.ub[u]


def _reformulate(coeffs, rhs: float, u: int, direction: Direction, bound: float, tctx: TermContext,
                 max_unknown: Optional[int]):
    """Multiply coeffs.x <= rhs by the bound factor and linearize.

    Returns (expr, rhs, outcomes) or a failure reason string.
    """
    sign = 1.0 if direction is Direction.LOWER else -1.0
    expr = AffineExpr()
    outcomes = []
    unknown = 0
    for k in sorted(coeffs):
        a = coeffs[k]
        try:
            outcome = linearize_term(sign * a, k, u, tctx)
        except LinearizationError:
            return "linearization_failed"
        if outcome.uses_unknown_term:
            unknown += 1
            if max_unknown is not None and unknown > max_unknown:
                return "too_many_unknown_terms"
        outcomes.append(outcome)
        expr.add_expr(outcome.expr)
        # linear part of the expansion: -lb * a_k x_k (lower) or +ub * a_k x_k (upper)
        expr.add_term(k, -sign * bound * a)
    # lower: - rhs * x_u <= - rhs * lb ; upper: + rhs * x_u <= rhs * ub
    expr.add_term(u, -sign * rhs)
    cut_rhs = -sign * rhs * bound - expr.constant
    expr.constant = 0.0
    return expr, cut_rhs, outcomes


def generate_rlt_cut(side: OneSidedRow, u: int, direction: Direction, ctx: SeparationContext,
                     x_star, stats: Optional[SeparationStats] = None) -> Optional[Cut]:
    """RLT cut from one row side and one bound factor of x_u; None if unusable."""
    bound = _factor_bound(ctx, u, direction)
    if math.isinf(bound):
        return None
    built = _reformulate(side.coeffs, side.rhs, u, direction, bound, ctx.term_context(x_star),
                         ctx.max_unknown_terms)
    if isinstance(built, str):
        if stats is not None:
            if built == "too_many_unknown_terms":
                stats.unknown_rejected += 1
            else:
                stats.failures += 1
        return None
    expr, rhs, outcomes = built
    if stats is not None:
        stats.cuts_built += 1
    provenance = CutProvenance(
        row_id=side.row_id,
        side=side.side,
        factor=u,
        direction=direction,
        substitutions=tuple(o.kind for o in outcomes),
        unknown_term_count=sum(1 for o in outcomes if o.uses_unknown_term),
    )
    return Cut(expr, rhs, expr.evaluate(x_star) - rhs, provenance)


def project_rows(problem: Problem, solution: LpSolution) -> ProjectedSystem:
    """Restrict every row side to the variables strictly between their bounds."""
    x = solution.x_star
    interior = solution.interior
    j1 = frozenset(int(k) for k in np.flatnonzero(interior))
    j2 = frozenset(range(problem.n_vars)) - j1
    system = ProjectedSystem(j1, j2)
    for side in problem.one_sided_rows():
        coeffs = {k: a for k, a in side.coeffs.items() if k in j1}
        fixed = sum(a * x[k] for k, a in side.coeffs.items() if k not in j1)
        system.rows[side.key] = (coeffs, side.rhs - fixed)
    return system


def projected_violation(side: OneSidedRow, u: int, direction: Direction, ctx: SeparationContext,
                        projected: ProjectedSystem, x_star) -> Optional[float]:
    """Violation at x* of the RLT cut built from the projected row side."""
    bound = _factor_bound(ctx, u, direction)
    if math.isinf(bound):
        return None
    coeffs, rhs = projected.rows[side.key]
    built = _reformulate(coeffs, rhs, u, direction, bound, ctx.term_context(x_star), None)
    if isinstance(built, str):
        return None
    expr, cut_rhs, _ = built
    return expr.evaluate(x_star) - cut_rhs


def full_violation(side: OneSidedRow, u: int, direction: Direction, ctx: SeparationContext, x_star) -> Optional[float]:
    """Violation at x* of the full RLT cut, ignoring the unknown-term limit."""
    bound = _factor_bound(ctx, u, direction)
    if math.isinf(bound):
        return None
    built = _reformulate(side.coeffs, side.rhs, u, direction, bound, ctx.term_context(x_star), None)
    if isinstance(built, str):
        return None
    expr, cut_rhs, _ = built
    return expr.evaluate(x_star) - cut_rhs


def candidate_triples(solution: LpSolution, mode: Mode, ctx: SeparationContext,
                      stats: Optional[SeparationStats] = None) -> List[Tuple[OneSidedRow, int, Direction]]:
    """(row side, factor variable, direction) combinations a driver would try."""
    triples = []
    if mode is Mode.BASELINE:
        for side in ctx.sides:
            for u in ctx.product_vars:
                for direction in (Direction.LOWER, Direction.UPPER):
                    if not math.isinf(_factor_bound(ctx, u, direction)):
                        triples.append((side, u, direction))
        return triples

    table = mark_rows(solution, ctx)
    if stats is not None:
        stats.marks += len(table)
    for row_id, u, mark in table.entries():
        for side in ctx.sides_by_row.get(row_id, ()):
            for direction in sorted(factor_choices(mark, _side_sense(side)), key=lambda d: d.value):
                if not math.isinf(_factor_bound(ctx, u, direction)):
                    triples.append((side, u, direction))
    return triples


def separate_rlt(solution: LpSolution, mode: Mode, projection: bool, ctx: SeparationContext) -> SeparationResult:
    """Violated RLT cuts at the LP solution, sorted by identity."""
    started = time.perf_counter()
    stats = SeparationStats()
    x = solution.x_star
    mode = Mode(mode)
    projected = project_rows(ctx.problem, solution) if projection else None

    cuts: Dict[Tuple, Cut] = {}
    for side, u, direction in candidate_triples(solution, mode, ctx, stats):
        identity = (side.row_id, 0 if side.side is Sense.LE else 1, u, direction.value)
        if identity in cuts:
            continue
        stats.candidates_examined += 1
        if projected is not None:
            stats.projected_checked += 1
            violation = projected_violation(side, u, direction, ctx, projected, x)
            if violation is None or violation <= ctx.eps_cut:
                stats.projected_filtered += 1
                continue
        cut = generate_rlt_cut(side, u, direction, ctx, x, stats)
        if cut is None or cut.violation_at <= ctx.eps_cut:
            continue
        cuts[identity] = cut

    ordered = [cuts[key] for key in sorted(cuts)]
    stats.cuts_kept = len(ordered)
    stats.seconds = time.perf_counter() - started
    logger.debug("RLT separation (%s%s): %d candidates, %d built, %d kept",
                 mode.value, ", projection" if projection else "", stats.candidates_examined,
                 stats.cuts_built, stats.cuts_kept)
    return SeparationResult(ordered, stats)
