"""
Problem model for bilinear-product MILPs.

Holds the immutable problem representation (variables, linear rows,
objective, product relations), its validation, and the product adjacency
index used by separation.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

logger = logging.getLogger(__name__)

INF = math.inf


class RltError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RltError):
    """Raised when a problem violates its invariants."""

    def __init__(self, issues):
        self.issues = list(issues)
        summary = "; ".join(f"{issue.location}: {issue.message}" for issue in self.issues[:5])
        more = f" (+{len(self.issues) - 5} more)" if len(self.issues) > 5 else ""
        super().__init__(f"{len(self.issues)} validation issue(s): {summary}{more}")


class VarKind(str, Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class Sense(str, Enum):
    LE = "<="
    GE = ">="
    EQ = "="

    def flipped(self) -> "Sense":
        if self is Sense.LE:
            return Sense.GE
        if self is Sense.GE:
            return Sense.LE
        return self


@dataclass(frozen=True)
class Variable:
    id: int
    name: str
    lb: float = 0.0
    ub: float = INF
    kind: VarKind = VarKind.CONTINUOUS

    @property
    def is_binary(self) -> bool:
        return self.kind is VarKind.BINARY

    @property
    def is_fixed(self) -> bool:
        return self.lb == self.ub


@dataclass(frozen=True)
class OneSidedRow:
    """A row side in `coeffs . x <= rhs` form.

    `side` is the sense of the originating row side: LE for the right-hand
    side of a row, GE for its (negated) left-hand side. Equality rows yield
    one of each with `is_equality` set.
    """
    row_id: int
    side: Sense
    coeffs: Mapping[int, float]
    rhs: float
    is_equality: bool = False

    @property
    def key(self) -> Tuple[int, int]:
        return (self.row_id, 0 if self.side is Sense.LE else 1)


@dataclass(frozen=True, eq=False)
class LinearRow:
    id: int
    name: str
    coeffs: Mapping[int, float]
    lhs: float = -INF
    rhs: float = INF

    @property
    def is_equality(self) -> bool:
        return self.lhs == self.rhs

    @property
    def sense(self) -> Optional[Sense]:
        """Sense of a single-sided or equality row; None for ranged rows."""
        if self.is_equality:
            return Sense.EQ
        if self.lhs == -INF:
            return Sense.LE
        if self.rhs == INF:
            return Sense.GE
        return None

    def one_sided(self) -> List[OneSidedRow]:
        """Split into `<=` sides; a `>=` side is stored negated."""
        sides = []
        if self.rhs != INF:
            sides.append(OneSidedRow(self.id, Sense.LE, dict(self.coeffs), self.rhs, self.is_equality))
        if self.lhs != -INF:
            negated = {k: -v for k, v in self.coeffs.items()}
            sides.append(OneSidedRow(self.id, Sense.GE, negated, -self.lhs, self.is_equality))
        return sides

    def activity(self, x) -> float:
        return sum(coef * x[k] for k, coef in self.coeffs.items())


class RelationOrigin(str, Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"


@dataclass(frozen=True)
class ProductRelation:
    """A * x_i + B * w + C * x_j + D  (sense)  x_i * x_j."""
    id: int
    i: int
    j: int
    w: int
    A: float = 0.0
    B: float = 1.0
    C: float = 0.0
    D: float = 0.0
    sense: Sense = Sense.EQ
    origin: RelationOrigin = RelationOrigin.EXPLICIT
    sources: Tuple[str, ...] = ()

    @property
    def is_explicit_form(self) -> bool:
        return self.A == 0.0 and self.C == 0.0 and self.D == 0.0 and self.B == 1.0

    def linear_side(self, x) -> float:
        return self.A * x[self.i] + self.B * x[self.w] + self.C * x[self.j] + self.D

    def side_coeffs(self) -> Tuple[Dict[int, float], float]:
        """Linear side as (sparse coefficients, constant), duplicates merged."""
        coeffs: Dict[int, float] = {}
        for var, coef in ((self.i, self.A), (self.w, self.B), (self.j, self.C)):
            coeffs[var] = coeffs.get(var, 0.0) + coef
        return {k: v for k, v in coeffs.items() if v != 0.0}, self.D

    def violation(self, x) -> float:
        """Amount by which the relation is violated at x (0 when satisfied)."""
        gap = self.linear_side(x) - x[self.i] * x[self.j]
        if self.sense is Sense.LE:
            return max(gap, 0.0)
        if self.sense is Sense.GE:
            return max(-gap, 0.0)
        return abs(gap)

    def canonical_key(self) -> Tuple:
        """Orientation-free identity: (i, j) ordered, A/C swapped with them."""
        if self.i <= self.j:
            return (self.i, self.j, self.w, self.sense, self.A, self.B, self.C, self.D)
        return (self.j, self.i, self.w, self.sense, self.C, self.B, self.A, self.D)

    def same_as(self, other: "ProductRelation", tol: float = 1e-9) -> bool:
        mine, theirs = self.canonical_key(), other.canonical_key()
        if mine[:4] != theirs[:4]:
            return False
        return all(abs(a - b) <= tol for a, b in zip(mine[4:], theirs[4:]))


@dataclass(frozen=True, eq=False)
class Problem:
    variables: Tuple[Variable, ...] = ()
    rows: Tuple[LinearRow, ...] = ()
    objective: Mapping[int, float] = field(default_factory=dict)
    relations: Tuple[ProductRelation, ...] = ()
    name: str = "problem"

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def binary_ids(self) -> Tuple[int, ...]:
        return tuple(v.id for v in self.variables if v.is_binary)

    @property
    def product_vars(self) -> Tuple[int, ...]:
        """Variables occurring as i or j in some relation, sorted."""
        ids = set()
        for rel in self.relations:
            ids.add(rel.i)
            ids.add(rel.j)
        return tuple(sorted(ids))

    def var_by_name(self, name: str) -> Optional[Variable]:
        for var in self.variables:
            if var.name == name:
                return var
        return None

    def bounds(self) -> Tuple[List[float], List[float]]:
        return [v.lb for v in self.variables], [v.ub for v in self.variables]

    def one_sided_rows(self) -> Iterator[OneSidedRow]:
        for row in self.rows:
            yield from row.one_sided()

    def objective_value(self, x) -> float:
        return sum(coef * x[k] for k, coef in self.objective.items())

    def with_relations(self, extra) -> "Problem":
        """Copy with relations appended; ids are renumbered densely."""
        merged = list(self.relations) + list(extra)
        renumbered = tuple(replace(rel, id=idx) for idx, rel in enumerate(merged))
        return replace(self, relations=renumbered)

    def without_relations(self, keep=None) -> "Problem":
        kept = [rel for rel in self.relations if keep is not None and keep(rel)]
        return replace(self, relations=tuple(replace(rel, id=idx) for idx, rel in enumerate(kept)))


@dataclass(frozen=True)
class ValidationIssue:
    location: str
    message: str


def validate(problem: Problem) -> List[ValidationIssue]:
    """Return every invariant violation of the problem; empty when valid."""
    issues: List[ValidationIssue] = []
    n = problem.n_vars

    def bad_number(value) -> bool:
        return isinstance(value, float) and math.isnan(value)

    for idx, var in enumerate(problem.variables):
        where = f"variable '{var.name}'"
        if var.id != idx:
            issues.append(ValidationIssue(where, f"id {var.id} does not match position {idx}"))
        if bad_number(var.lb) or bad_number(var.ub):
            issues.append(ValidationIssue(where, "bound is NaN"))
            continue
        if var.lb > var.ub:
            issues.append(ValidationIssue(where, f"lb {var.lb} > ub {var.ub}"))
        if var.lb == INF or var.ub == -INF:
            issues.append(ValidationIssue(where, "bound points the wrong way to infinity"))
        if var.is_binary and not (0.0 <= var.lb and var.ub <= 1.0):
            issues.append(ValidationIssue(where, f"binary variable has bounds [{var.lb}, {var.ub}] outside [0, 1]"))

    names = [var.name for var in problem.variables]
    if len(set(names)) != len(names):
        issues.append(ValidationIssue("variables", "variable names are not unique"))

    for idx, row in enumerate(problem.rows):
        where = f"row '{row.name}'"
        if row.id != idx:
            issues.append(ValidationIssue(where, f"id {row.id} does not match position {idx}"))
        if bad_number(row.lhs) or bad_number(row.rhs):
            issues.append(ValidationIssue(where, "side is NaN"))
        elif row.lhs == -INF and row.rhs == INF:
            issues.append(ValidationIssue(where, "both sides infinite"))
        elif row.lhs > row.rhs:
            issues.append(ValidationIssue(where, f"lhs {row.lhs} > rhs {row.rhs}"))
        for var, coef in row.coeffs.items():
            if not 0 <= var < n:
                issues.append(ValidationIssue(where, f"unknown variable index {var}"))
            if coef == 0.0:
                issues.append(ValidationIssue(where, f"explicit zero coefficient on variable {var}"))
            elif bad_number(coef) or math.isinf(coef):
                issues.append(ValidationIssue(where, f"non-finite coefficient on variable {var}"))

    for var, coef in problem.objective.items():
        if not 0 <= var < n:
            issues.append(ValidationIssue("objective", f"unknown variable index {var}"))
        if bad_number(coef) or math.isinf(coef):
            issues.append(ValidationIssue("objective", f"non-finite coefficient on variable {var}"))

    for idx, rel in enumerate(problem.relations):
        where = f"relation {rel.id}"
        if rel.id != idx:
            issues.append(ValidationIssue(where, f"id {rel.id} does not match position {idx}"))
        for role in ("i", "j", "w"):
            var = getattr(rel, role)
            if not 0 <= var < n:
                issues.append(ValidationIssue(where, f"unknown variable index {var} as {role}"))
        if any(bad_number(c) or math.isinf(c) for c in (rel.A, rel.B, rel.C, rel.D)):
            issues.append(ValidationIssue(where, "non-finite coefficient"))
        if rel.B == 0.0:
            issues.append(ValidationIssue(where, "B must be nonzero"))
        if rel.origin is RelationOrigin.IMPLICIT and 0 <= rel.i < n and not problem.variables[rel.i].is_binary:
            issues.append(ValidationIssue(where, "implicit relation needs a binary x_i"))
    return issues


@dataclass(frozen=True)
class ProductIndex:
    """Adjacency of product relations: per variable and per unordered pair."""
    by_var: Mapping[int, Tuple[Tuple[int, int], ...]]
    by_pair: Mapping[Tuple[int, int], Tuple[int, ...]]
    duplicates: Tuple[int, ...] = ()

    @staticmethod
    def pair_key(a: int, b: int) -> Tuple[int, int]:
        return (a, b) if a <= b else (b, a)

    def partners(self, var: int) -> Tuple[Tuple[int, int], ...]:
        return self.by_var.get(var, ())

    def relations_for(self, a: int, b: int) -> Tuple[int, ...]:
        return self.by_pair.get(self.pair_key(a, b), ())

    def __len__(self) -> int:
        return sum(len(ids) for ids in self.by_pair.values())


def build_product_index(problem: Problem) -> ProductIndex:
    """Index relations by variable and by unordered (i, j) pair.

    Explicit relations repeating an earlier (i, j, w, sense) are dropped
    from the index and listed in `duplicates`.
    """
    by_var: Dict[int, List[Tuple[int, int]]] = {}
    by_pair: Dict[Tuple[int, int], List[int]] = {}
    seen_explicit = set()
    duplicates = []

    for rel in problem.relations:
        if rel.origin is RelationOrigin.EXPLICIT and rel.is_explicit_form:
            key = (ProductIndex.pair_key(rel.i, rel.j), rel.w, rel.sense)
            if key in seen_explicit:
                duplicates.append(rel.id)
                logger.warning("Duplicate explicit relation %d on (%d, %d, w=%d) dropped from index",
                               rel.id, rel.i, rel.j, rel.w)
                continue
            seen_explicit.add(key)
        by_var.setdefault(rel.i, []).append((rel.j, rel.id))
        if rel.j != rel.i:
            by_var.setdefault(rel.j, []).append((rel.i, rel.id))
        by_pair.setdefault(ProductIndex.pair_key(rel.i, rel.j), []).append(rel.id)

    return ProductIndex(
        by_var={var: tuple(sorted(entries)) for var, entries in sorted(by_var.items())},
        by_pair={pair: tuple(ids) for pair, ids in sorted(by_pair.items())},
        duplicates=tuple(duplicates),
    )
