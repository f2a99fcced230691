"""
Implicit bilinear product detection.

Linear rows with a binary variable x_i are read as implications on a pair
(w, x_j). Two implications, one per value of x_i, combine into a product
relation A*x_i + B*w + C*x_j + D <=/>= x_i*x_j.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from itertools import permutations
from typing import Dict, FrozenSet, List, Optional, Tuple

from linearize import CliqueStore, mine_cliques
from model import Problem, ProductRelation, RelationOrigin, Sense

logger = logging.getLogger(__name__)

MAX_PAIRS_PER_GROUP = 16
DEDUP_TOL = 1e-9


class CandidateSource(str, Enum):
    THREE_VAR_ROW = "three_var_row"
    IMPLIED_BOUND = "implied_bound"
    CLIQUE = "clique"
    TWO_VAR_ROW = "two_var_row"
    GLOBAL_BOUND = "global_bound"


_SOURCE_RANK = {source: rank for rank, source in enumerate(CandidateSource)}


@dataclass(frozen=True)
class CandidateRelation:
    """a*x_i + b*w + c*x_j <= d.

    For two-variable-row and global-bound candidates x_i is not in the row
    (a = 0) and xi is None; for implied bounds and cliques xj is None (c = 0).
    """
    a: float
    b: float
    c: float
    d: float
    source: CandidateSource
    xi: Optional[int]
    w: int
    xj: Optional[int] = None
    row_name: str = ""

    def form(self) -> Tuple[float, float, float, float]:
        return (self.a, self.b, self.c, self.d)

    def sort_key(self):
        return (-abs(self.a), _SOURCE_RANK[self.source], self.row_name, self.form())


@dataclass
class CandidateStore:
    by_triple: Dict[Tuple[int, int, int], List[CandidateRelation]] = field(default_factory=lambda: defaultdict(list))
    by_pair: Dict[Tuple[int, int], List[CandidateRelation]] = field(default_factory=lambda: defaultdict(list))
    two_var: Dict[FrozenSet[int], List[CandidateRelation]] = field(default_factory=lambda: defaultdict(list))
    global_bounds: Dict[int, List[CandidateRelation]] = field(default_factory=lambda: defaultdict(list))
    cliques: Optional[CliqueStore] = None

    def __len__(self) -> int:
        lists = (self.by_triple, self.by_pair, self.two_var, self.global_bounds)
        return sum(len(v) for group in lists for v in group.values())

    def all(self) -> List[CandidateRelation]:
        out = []
        for group in (self.by_triple, self.by_pair, self.two_var, self.global_bounds):
            for key in sorted(group, key=lambda k: sorted(k) if isinstance(k, frozenset) else k):
                out.extend(group[key])
        return out

    def _add(self, bucket: List[CandidateRelation], cand: CandidateRelation):
        for existing in bucket:
            if existing.form() == cand.form() and (existing.xi, existing.w, existing.xj) == (cand.xi, cand.w, cand.xj):
                return
        bucket.append(cand)

    def add(self, cand: CandidateRelation):
        if cand.source is CandidateSource.THREE_VAR_ROW:
            self._add(self.by_triple[(cand.xi, cand.w, cand.xj)], cand)
        elif cand.source in (CandidateSource.IMPLIED_BOUND, CandidateSource.CLIQUE):
            self._add(self.by_pair[(cand.xi, cand.w)], cand)
        elif cand.source is CandidateSource.TWO_VAR_ROW:
            self._add(self.two_var[frozenset((cand.w, cand.xj))], cand)
        else:
            self._add(self.global_bounds[cand.w], cand)

    def group(self, xi: int, w: int, xj: int) -> List[CandidateRelation]:
        """Every candidate usable for the triple (x_i, w, x_j), best first."""
        members = list(self.by_triple.get((xi, w, xj), ()))
        members.extend(self.by_pair.get((xi, w), ()))
        for cand in self.two_var.get(frozenset((w, xj)), ()):
            # two-variable rows are stored once; orient them as (w, x_j)
            if cand.w == w:
                members.append(cand)
            else:
                members.append(CandidateRelation(0.0, cand.c, cand.b, cand.d, cand.source, None, w, xj, cand.row_name))
        members.extend(self.global_bounds.get(w, ()))
        return sorted(members, key=CandidateRelation.sort_key)


def collect_candidates(problem: Problem, cliques: Optional[CliqueStore] = None) -> CandidateStore:
    """Harvest implication candidates from short rows, bounds and cliques."""
    if cliques is None:
        cliques = mine_cliques(problem)
    store = CandidateStore(cliques=cliques)
    variables = problem.variables
    if not problem.binary_ids:
        return store

    for side in problem.one_sided_rows():
        coeffs = side.coeffs
        name = problem.rows[side.row_id].name
        if side.side is Sense.GE:
            name += "_ge"
        items = sorted(coeffs.items())
        if len(items) == 1:
            (v, coef), = items
            store.add(CandidateRelation(0.0, coef, 0.0, side.rhs, CandidateSource.GLOBAL_BOUND, None, v, None, name))
            continue
        if len(items) == 2:
            (p, cp), (q, cq) = items
            store.add(CandidateRelation(0.0, cp, cq, side.rhs, CandidateSource.TWO_VAR_ROW, None, p, q, name))
        if len(items) > 3 or not any(variables[v].is_binary for v, _ in items):
            continue
        for xi, a in items:
            if not variables[xi].is_binary:
                continue
            rest = [(v, c) for v, c in items if v != xi]
            if len(rest) == 1:
                (w, b), = rest
                store.add(CandidateRelation(a, b, 0.0, side.rhs, CandidateSource.IMPLIED_BOUND, xi, w, None, name))
            else:
                (p, cp), (q, cq) = rest
                store.add(CandidateRelation(a, cp, cq, side.rhs, CandidateSource.THREE_VAR_ROW, xi, p, q, name))
                store.add(CandidateRelation(a, cq, cp, side.rhs, CandidateSource.THREE_VAR_ROW, xi, q, p, name))

    for clique in cliques.cliques:
        for (u, comp_u), (v, comp_v) in permutations(clique.members, 2):
            if u == v:
                continue
            # lit_u + lit_v <= 1 with lit = x or 1 - x
            a = -1.0 if comp_u else 1.0
            b = -1.0 if comp_v else 1.0
            d = 1.0 - comp_u - comp_v
            store.add(CandidateRelation(a, b, 0.0, d, CandidateSource.CLIQUE, u, v, None, clique.source))

    for var in variables:
        if var.ub != float("inf"):
            store.add(CandidateRelation(0.0, 1.0, 0.0, var.ub, CandidateSource.GLOBAL_BOUND, None, var.id, None,
                                        f"ub({var.name})"))
        if var.lb != float("-inf"):
            store.add(CandidateRelation(0.0, -1.0, 0.0, -var.lb, CandidateSource.GLOBAL_BOUND, None, var.id, None,
                                        f"lb({var.name})"))

    logger.debug("Collected %d detection candidates", len(store))
    return store


def reject_reason(rel1: CandidateRelation, rel2: CandidateRelation) -> Optional[str]:
    """Why derivation refuses this ordered pair; None if it applies."""
    a1, b1, c1, _ = rel1.form()
    a2, b2, c2, _ = rel2.form()
    if b1 * b2 <= 0:
        return "b1*b2 <= 0"
    if c2 * b1 - b2 * c1 == 0:
        return "gamma = 0"
    if a1 == 0 and a2 == 0:
        return "a1 = a2 = 0"
    if not (a1 >= 0 >= a2):
        return "binary coefficients do not have opposite signs"
    return None


def derive_product(rel1: CandidateRelation, rel2: CandidateRelation, xi: Optional[int] = None,
                   relation_id: int = -1) -> Optional[ProductRelation]:
    """Product relation implied by rel1 (x_i = 1 side) and rel2 (x_i = 0 side).

    rel1 and rel2 must describe the same (x_i, w, x_j); None when a filter
    rejects the pair.
    """
    reason = reject_reason(rel1, rel2)
    if reason is not None:
        logger.debug("Pair %s / %s rejected: %s", rel1.row_name, rel2.row_name, reason)
        return None
    xi = xi if xi is not None else (rel1.xi if rel1.xi is not None else rel2.xi)
    xj = rel1.xj if rel1.xj is not None else rel2.xj
    if xi is None or xj is None:
        return None

    a1, b1, c1, d1 = rel1.form()
    _, b2, c2, d2 = rel2.form()
    gamma = c2 * b1 - b2 * c1
    A = (b2 * (a1 - d1) + b1 * d2) / gamma
    B = b1 * b2 / gamma
    C = b1 * c2 / gamma
    D = -b1 * d2 / gamma
    sense = Sense.LE if b1 / gamma > 0 else Sense.GE
    return ProductRelation(relation_id, xi, xj, rel1.w, A + 0.0, B + 0.0, C + 0.0, D + 0.0, sense,
                           RelationOrigin.IMPLICIT, (rel1.row_name, rel2.row_name))


@dataclass
class DetectionResult:
    relations: List[ProductRelation]
    candidates: int = 0
    groups: int = 0
    pairs_tried: int = 0
    derived: int = 0


def _covered(rel: ProductRelation, others) -> bool:
    key = rel.canonical_key()
    for other in others:
        okey = other.canonical_key()
        if okey[:3] != key[:3]:
            continue
        if other.sense is not rel.sense and other.sense is not Sense.EQ:
            continue
        if all(abs(x - y) <= DEDUP_TOL for x, y in zip(key[4:], okey[4:])):
            return True
    return False


def detect_with_stats(problem: Problem, cliques: Optional[CliqueStore] = None) -> DetectionResult:
    """Detect implicit products and return them with candidate and pair counts."""
    store = collect_candidates(problem, cliques)
    variables = problem.variables

    triples = set(store.by_triple)
    for (xi, w) in store.by_pair:
        for pair in store.two_var:
            if w in pair and xi not in pair and len(pair) == 2:
                (xj,) = pair - {w}
                triples.add((xi, w, xj))
    triples = sorted(t for t in triples if variables[t[0]].is_binary and len({*t}) == 3)

    result = DetectionResult([], candidates=len(store), groups=len(triples))
    derived: List[ProductRelation] = []
    for xi, w, xj in triples:
        members = store.group(xi, w, xj)
        tried = 0
        for rel1, rel2 in permutations(members, 2):
            if tried >= MAX_PAIRS_PER_GROUP:
                break
            if rel1.a == 0 and rel2.a == 0 or not (rel1.a >= 0 >= rel2.a):
                continue
            tried += 1
            relation = derive_product(rel1, rel2, xi)
            if relation is None or relation.j != xj:
                continue
            result.derived += 1
            if _covered(relation, derived) or _covered(relation, problem.relations):
                continue
            derived.append(relation)
        result.pairs_tried += tried

    base = len(problem.relations)
    result.relations = [
        ProductRelation(base + idx, r.i, r.j, r.w, r.A, r.B, r.C, r.D, r.sense, r.origin, r.sources)
        for idx, r in enumerate(derived)
    ]
    logger.info("Detected %d implicit product relation(s) from %d candidate pair(s) in %d group(s)",
                len(result.relations), result.pairs_tried, result.groups)
    return result


def detect_implicit_products(problem: Problem) -> List[ProductRelation]:
    """All implicit product relations not already stated in the problem."""
    return detect_with_stats(problem).relations
