"""
Single-term linearization rules for bilinear products.

McCormick envelopes, square secant/tangent approximators, the binary square
identity, clique identities mined from rows, and the sign-driven
substitution of product relations.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from model import INF, LinearRow, Problem, ProductIndex, ProductRelation, RltError, Sense

logger = logging.getLogger(__name__)

CLIQUE_TOL = 1e-9


class LinearizationError(RltError):
    """A product term has no valid linear underestimator."""


class NoApproximatorError(LinearizationError):
    """A required bound is infinite, so no approximator exists."""


class AffineExpr:
    """Sparse linear expression sum(coef * x[var]) + constant.

    Zero coefficients are never stored.
    """

    __slots__ = ("coeffs", "constant")

    def __init__(self, coeffs: Optional[Mapping[int, float]] = None, constant: float = 0.0):
        self.coeffs: Dict[int, float] = {}
        self.constant = float(constant)
        for var, coef in (coeffs or {}).items():
            self.add_term(var, coef)

    def add_term(self, var: int, coef: float) -> "AffineExpr":
        value = self.coeffs.get(var, 0.0) + coef
        if value == 0.0:
            self.coeffs.pop(var, None)
        else:
            self.coeffs[var] = value
        return self

    def add_expr(self, other: "AffineExpr", scale: float = 1.0) -> "AffineExpr":
        for var in sorted(other.coeffs):
            self.add_term(var, scale * other.coeffs[var])
        self.constant += scale * other.constant
        return self

    def scaled(self, scale: float) -> "AffineExpr":
        return AffineExpr({k: scale * v for k, v in self.coeffs.items()}, scale * self.constant)

    def evaluate(self, x) -> float:
        return sum(coef * x[var] for var, coef in self.coeffs.items()) + self.constant

    def norm(self) -> float:
        return math.sqrt(sum(coef * coef for coef in self.coeffs.values()))

    def copy(self) -> "AffineExpr":
        clone = AffineExpr()
        clone.coeffs = dict(self.coeffs)
        clone.constant = self.constant
        return clone

    def __eq__(self, other):
        if not isinstance(other, AffineExpr):
            return NotImplemented
        return self.coeffs == other.coeffs and self.constant == other.constant

    def __repr__(self):
        terms = " + ".join(f"{coef:g}*x{var}" for var, coef in sorted(self.coeffs.items()))
        return f"AffineExpr({terms or '0'} + {self.constant:g})"


# ---------------------------------------------------------------------------
# McCormick
# ---------------------------------------------------------------------------

def product_envelope(k: int, j: int, lb: Sequence[float], ub: Sequence[float], side: str) -> List[Tuple[str, AffineExpr]]:
    """Affine envelopes of x_k * x_j over the box.

    side "under" gives the two underestimators, "over" the two
    overestimators; envelopes needing an infinite bound are left out.
    """
    lk, uk, lj, uj = lb[k], ub[k], lb[j], ub[j]
    pieces = []
    if side == "under":
        # x_k x_j >= lj x_k + lk x_j - lk lj   and   >= uj x_k + uk x_j - uk uj
        candidates = (("under_lo", lk, lj), ("under_up", uk, uj))
    else:
        # x_k x_j <= uj x_k + lk x_j - lk uj   and   <= lj x_k + uk x_j - uk lj
        candidates = (("over_lo", lk, uj), ("over_up", uk, lj))
    for name, bk, bj in candidates:
        if math.isinf(bk) or math.isinf(bj):
            continue
        expr = AffineExpr()
        expr.add_term(k, bj)
        expr.add_term(j, bk)
        expr.constant = -bk * bj
        pieces.append((name, expr))
    return pieces


def mccormick_with_skips(relation: ProductRelation, lb, ub) -> Tuple[List[LinearRow], List[str]]:
    """McCormick rows for a relation, plus the names of rows skipped for infinite bounds."""
    sides = []
    if relation.sense in (Sense.GE, Sense.EQ):
        sides.append("under")
    if relation.sense in (Sense.LE, Sense.EQ):
        sides.append("over")

    lin_coeffs, lin_const = relation.side_coeffs()
    rows: List[LinearRow] = []
    skipped: List[str] = []
    for side in sides:
        pieces = dict(product_envelope(relation.i, relation.j, lb, ub, side))
        names = ("under_lo", "under_up") if side == "under" else ("over_lo", "over_up")
        for name in names:
            if name not in pieces:
                skipped.append(name)
                continue
            env = pieces[name]
            # under: L >= env  ->  env - L <= 0 ; over: L <= env  ->  L - env <= 0
            sign = 1.0 if side == "over" else -1.0
            expr = AffineExpr(lin_coeffs, lin_const)
            expr.add_expr(env, -1.0)
            expr = expr.scaled(sign)
            rows.append(LinearRow(-1, f"mc_r{relation.id}_{name}", dict(sorted(expr.coeffs.items())),
                                  -INF, -expr.constant))
    if skipped:
        logger.debug("Relation %d: skipped McCormick rows %s (infinite bounds)", relation.id, skipped)
    return rows, skipped


def mccormick(relation: ProductRelation, lb, ub) -> List[LinearRow]:
    """McCormick inequalities written on the relation's linear side."""
    return mccormick_with_skips(relation, lb, ub)[0]


# ---------------------------------------------------------------------------
# Squares
# ---------------------------------------------------------------------------

def square_approximator(lb: float, ub: float, x_star: float, side: str, var: int = 0) -> AffineExpr:
    """Secant (side "over") or tangent at x_star (side "under") of x**2."""
    if side == "over":
        if math.isinf(lb) or math.isinf(ub):
            raise NoApproximatorError(f"secant of x{var}^2 needs finite bounds, got [{lb}, {ub}]")
        return AffineExpr({var: lb + ub}, -lb * ub)
    if side == "under":
        if not math.isfinite(x_star):
            raise NoApproximatorError(f"tangent of x{var}^2 needs a finite point, got {x_star}")
        return AffineExpr({var: 2.0 * x_star}, -x_star * x_star)
    raise ValueError(f"side must be 'under' or 'over', got {side!r}")


# ---------------------------------------------------------------------------
# Cliques
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Clique:
    members: Tuple[Tuple[int, bool], ...]
    source: str = ""


@dataclass
class CliqueStore:
    """Cliques over binary literals with lookup by variable pair.

    A member (v, True) is the complemented literal 1 - x_v; the stored
    meaning is that the literals sum to at most 1.
    """
    cliques: List[Clique] = field(default_factory=list)
    _pairs: Dict[Tuple[int, int], List[Tuple[bool, bool]]] = field(default_factory=dict)

    def add(self, clique: Clique):
        if len(clique.members) < 2:
            return
        self.cliques.append(clique)
        members = sorted(clique.members)
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                (va, ca), (vb, cb) = members[a], members[b]
                if va == vb:
                    continue
                patterns = self._pairs.setdefault((va, vb), [])
                if (ca, cb) not in patterns:
                    patterns.append((ca, cb))

    def patterns(self, k: int, j: int) -> List[Tuple[bool, bool]]:
        """Complement patterns (for k, for j) of cliques containing both."""
        if k <= j:
            return list(self._pairs.get((k, j), ()))
        return [(cj, ck) for ck, cj in self._pairs.get((j, k), ())]

    def __len__(self) -> int:
        return len(self.cliques)


def mine_cliques(problem: Problem) -> CliqueStore:
    """Collect rows that read as cliques over binary literals."""
    store = CliqueStore()
    for side in problem.one_sided_rows():
        coeffs = side.coeffs
        if len(coeffs) < 2:
            continue
        if not all(problem.variables[v].is_binary for v in coeffs):
            continue
        magnitude = abs(next(iter(coeffs.values())))
        if any(abs(abs(c) - magnitude) > CLIQUE_TOL * magnitude for c in coeffs.values()):
            continue
        n_complemented = sum(1 for c in coeffs.values() if c < 0)
        if side.rhs / magnitude > 1 - n_complemented + CLIQUE_TOL:
            continue
        members = tuple(sorted((v, c < 0) for v, c in coeffs.items()))
        store.add(Clique(members, problem.rows[side.row_id].name))
    logger.debug("Mined %d clique(s) from %d rows", len(store), len(problem.rows))
    return store


def clique_identity(k: int, j: int, pattern: Tuple[bool, bool]) -> AffineExpr:
    """Exact linear value of x_k * x_j under a two-literal clique."""
    comp_k, comp_j = pattern
    if not comp_k and not comp_j:
        return AffineExpr()
    if not comp_k and comp_j:
        return AffineExpr({k: 1.0})
    if comp_k and not comp_j:
        return AffineExpr({j: 1.0})
    return AffineExpr({k: 1.0, j: 1.0}, -1.0)


# ---------------------------------------------------------------------------
# Ladder
# ---------------------------------------------------------------------------

class TermKind(str, Enum):
    SUBSTITUTED_W = "substituted_w"
    BINARY_SQUARE = "binary_square"
    SQUARE_SECANT = "square_secant"
    SQUARE_TANGENT = "square_tangent"
    CLIQUE = "clique"
    MCCORMICK_ENV = "mccormick_env"
    UNKNOWN_MCCORMICK = "unknown_mccormick"


@dataclass(frozen=True)
class LinearizationOutcome:
    expr: AffineExpr
    kind: TermKind
    uses_unknown_term: bool = False
    relation_id: Optional[int] = None


@dataclass
class TermContext:
    """Everything a term linearization reads: problem data, global bounds, x*."""
    problem: Problem
    index: ProductIndex
    cliques: CliqueStore
    lb: Sequence[float]
    ub: Sequence[float]
    x_star: Sequence[float]


def substitution_allowed(relation: ProductRelation, coef: float) -> bool:
    """Whether a relation of this sense may replace a product with this objective sign."""
    if relation.sense is Sense.EQ:
        return True
    if relation.sense is Sense.LE:
        return coef >= 0.0
    return coef <= 0.0


def linearize_term(coef: float, k: int, j: int, ctx: TermContext) -> LinearizationOutcome:
    """Linear underestimator of coef * x_k * x_j, first matching rule wins.

    Raises LinearizationError when nothing valid exists.
    """
    problem = ctx.problem
    relation_ids = ctx.index.relations_for(k, j)

    best = None
    for rel_id in relation_ids:
        relation = problem.relations[rel_id]
        if not substitution_allowed(relation, coef):
            continue
        coeffs, const = relation.side_coeffs()
        expr = AffineExpr(coeffs, const).scaled(coef)
        value = expr.evaluate(ctx.x_star)
        if best is None or value > best[0]:
            best = (value, rel_id, expr)
    if best is not None:
        return LinearizationOutcome(best[2], TermKind.SUBSTITUTED_W, False, best[1])

    if k == j:
        if problem.variables[j].is_binary:
            return LinearizationOutcome(AffineExpr({j: coef}), TermKind.BINARY_SQUARE)
        if coef > 0:
            point = min(max(ctx.x_star[j], ctx.lb[j]), ctx.ub[j])
            expr = square_approximator(ctx.lb[j], ctx.ub[j], point, "under", j)
            return LinearizationOutcome(expr.scaled(coef), TermKind.SQUARE_TANGENT)
        expr = square_approximator(ctx.lb[j], ctx.ub[j], ctx.x_star[j], "over", j)
        return LinearizationOutcome(expr.scaled(coef), TermKind.SQUARE_SECANT)

    if problem.variables[k].is_binary and problem.variables[j].is_binary:
        patterns = ctx.cliques.patterns(k, j)
        if patterns:
            expr = clique_identity(k, j, sorted(patterns)[0])
            return LinearizationOutcome(expr.scaled(coef), TermKind.CLIQUE)

    side = "under" if coef > 0 else "over"
    best = None
    for _, env in product_envelope(k, j, ctx.lb, ctx.ub, side):
        expr = env.scaled(coef)
        value = expr.evaluate(ctx.x_star)
        if best is None or value > best[0]:
            best = (value, expr)
    if best is None:
        raise NoApproximatorError(f"no McCormick {side}estimator for x{k}*x{j} (infinite bounds)")
    if relation_ids:
        return LinearizationOutcome(best[1], TermKind.MCCORMICK_ENV, False, relation_ids[0])
    return LinearizationOutcome(best[1], TermKind.UNKNOWN_MCCORMICK, True)
