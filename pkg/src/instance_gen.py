"""
Seeded random instance generators.

All generators take a numpy Generator so that a corpus is reproducible
from a single seed.
"""

import logging
import math
import os
from typing import List, Optional, Tuple

import numpy as np

from instance_io import INSTANCE_SUFFIX, write_instance
from model import INF, LinearRow, Problem, ProductRelation, RelationOrigin, Sense, Variable, VarKind
from simplex import LpInstance, LpRow

logger = logging.getLogger(__name__)

W_BOUND = 100.0
XJ_BOUND = 5.0


def _clean(coeffs):
    return {k: float(v) for k, v in sorted(coeffs.items()) if v != 0.0}


def _box_max(coeffs, lb, ub) -> float:
    """max of coeffs . x over the box."""
    return sum(c * (ub[k] if c > 0 else lb[k]) for k, c in coeffs.items())


def random_relation(rng: np.random.Generator, i: int = 0, j: int = 1, w: int = 2) -> ProductRelation:
    """Random A x_i + B w + C x_j + D (<=/>=) x_i x_j with coefficients in [-10, 10], |B| >= 0.5."""
    A, C, D = rng.uniform(-10.0, 10.0, size=3)
    B = rng.uniform(0.5, 10.0) * rng.choice([-1.0, 1.0])
    sense = Sense.LE if rng.random() < 0.5 else Sense.GE
    return ProductRelation(0, i, j, w, float(A), float(B), float(C), float(D), sense, RelationOrigin.IMPLICIT)


def bigm_rows(relation: ProductRelation, lb, ub) -> List[Tuple[dict, float]]:
    """Encode a relation with binary x_i as two big-M rows (coeffs, rhs), <= form.

    The first row is active at x_i = 1, the second at x_i = 0.
    """
    i, j, w = relation.i, relation.j, relation.w
    A, B, C, D = relation.A, relation.B, relation.C, relation.D
    flip = 1.0 if relation.sense is Sense.LE else -1.0

    # x_i = 1:  flip * (B w + (C - 1) x_j) <= flip * (-D - A)
    one = {w: flip * B, j: flip * (C - 1.0)}
    rhs_one = flip * (-D - A)
    big_one = max(0.0, _box_max(one, lb, ub) - rhs_one) + 1.0
    row1 = dict(one)
    row1[i] = big_one
    # x_i = 0:  flip * (B w + C x_j) <= flip * (-D)
    zero = {w: flip * B, j: flip * C}
    rhs_zero = flip * -D
    big_zero = max(0.0, _box_max(zero, lb, ub) - rhs_zero) + 1.0
    row2 = dict(zero)
    row2[i] = -big_zero
    return [(_clean(row1), rhs_one + big_one), (_clean(row2), rhs_zero)]


def bigm_instance(rng: np.random.Generator) -> Tuple[Problem, ProductRelation]:
    """Problem holding only the big-M encoding of one random relation."""
    relation = random_relation(rng)
    lb = [0.0, -XJ_BOUND, -W_BOUND]
    ub = [1.0, XJ_BOUND, W_BOUND]
    variables = (
        Variable(0, "xi", 0.0, 1.0, VarKind.BINARY),
        Variable(1, "xj", -XJ_BOUND, XJ_BOUND),
        Variable(2, "w", -W_BOUND, W_BOUND),
    )
    rows = tuple(
        LinearRow(idx, f"bigm{idx}", coeffs, -INF, rhs)
        for idx, (coeffs, rhs) in enumerate(bigm_rows(relation, lb, ub))
    )
    return Problem(variables, rows, {}, (), "bigm"), relation


def _general_relation(rng: np.random.Generator, rel_id: int, a: int, b: int, w: int) -> ProductRelation:
    """A x_a + B w + C x_b + D (sense) x_a x_b with small integer coefficients, B != 0."""
    A, C, D = (float(v) for v in rng.integers(-2, 3, size=3))
    B = float(rng.choice([-2.0, -1.0, 1.0, 2.0]))
    sense = (Sense.LE, Sense.GE, Sense.EQ)[int(rng.integers(0, 3))]
    return ProductRelation(rel_id, a, b, w, A, B, C, D, sense, RelationOrigin.IMPLICIT)


def solved_w(relation: ProductRelation, xi: float, xj: float) -> float:
    """The w making the relation hold with equality at (x_i, x_j)."""
    return (xi * xj - relation.A * xi - relation.C * xj - relation.D) / relation.B


def cut_validity_instance(rng: np.random.Generator, grid_points: int = 5,
                          general: bool = False) -> Tuple[Problem, np.ndarray]:
    """Small problem with up to two products, finite bounds and a feasible grid point.

    By default the products are "=" relations w = x_a * x_b. With general set,
    x_a is binary and each relation gets random coefficients and sense.
    Returns the problem and the feasible reference point it was built around.
    """
    n_base = int(rng.integers(2, 4))
    n_products = int(rng.integers(1, 3))
    variables: List[Variable] = []
    point: List[float] = []
    for k in range(n_base):
        if rng.random() < 0.4 or (general and k == 0):
            variables.append(Variable(k, f"b{k}", 0.0, 1.0, VarKind.BINARY))
            point.append(float(rng.integers(0, 2)))
        else:
            lo = float(rng.integers(-2, 1))
            hi = lo + float(rng.integers(1, 4))
            variables.append(Variable(k, f"x{k}", lo, hi))
            grid = np.linspace(lo, hi, grid_points)
            point.append(float(rng.choice(grid)))

    relations = []
    if general:
        pairs = [(a, b) for a in range(n_base) for b in range(n_base)
                 if a != b and variables[a].is_binary and not (variables[b].is_binary and b < a)]
    else:
        pairs = [(a, b) for a in range(n_base) for b in range(a, n_base)]
    chosen = rng.choice(len(pairs), size=min(n_products, len(pairs)), replace=False)
    for idx in sorted(int(c) for c in chosen):
        a, b = pairs[idx]
        w = len(variables)
        if general:
            relation = _general_relation(rng, len(relations), a, b, w)
            corners = [solved_w(relation, xa, xb) for xa in (0.0, 1.0) for xb in (variables[b].lb, variables[b].ub)]
            lo, hi = min(corners), max(corners)
            if relation.sense is not Sense.EQ or lo == hi:
                lo, hi = lo - 1.0, hi + 1.0
            variables.append(Variable(w, f"w{a}{b}", float(lo), float(hi)))
            point.append(solved_w(relation, point[a], point[b]))
        else:
            corners = [variables[a].lb * variables[b].lb, variables[a].lb * variables[b].ub,
                       variables[a].ub * variables[b].lb, variables[a].ub * variables[b].ub]
            variables.append(Variable(w, f"w{a}{b}", float(min(corners)), float(max(corners))))
            point.append(point[a] * point[b])
            relation = ProductRelation(len(relations), a, b, w, sense=Sense.EQ)
        relations.append(relation)

    n = len(variables)
    x0 = np.array(point)
    rows = []
    for r in range(int(rng.integers(1, 7))):
        support = rng.choice(n, size=int(rng.integers(1, min(n, 3) + 1)), replace=False)
        coeffs = _clean({int(k): float(rng.integers(-3, 4)) for k in support})
        if not coeffs:
            continue
        activity = sum(c * x0[k] for k, c in coeffs.items())
        if rng.random() < 0.2:
            rows.append(LinearRow(len(rows), f"r{r}", coeffs, activity, activity))
        else:
            rows.append(LinearRow(len(rows), f"r{r}", coeffs, -INF, activity + float(rng.integers(0, 3))))
    objective = _clean({k: float(rng.integers(-3, 4)) for k in range(n)})
    return Problem(tuple(variables), tuple(rows), objective, tuple(relations), "cutcheck"), x0


def mixed_instance(rng: np.random.Generator, n_items: Optional[int] = None) -> Problem:
    """MILP with an implicit binary x continuous product gadget, a knapsack part,
    and (sometimes) an explicit binary x continuous product."""
    variables: List[Variable] = []
    rows: List[LinearRow] = []
    objective = {}

    def var(name, lb, ub, kind=VarKind.CONTINUOUS) -> int:
        variables.append(Variable(len(variables), name, lb, ub, kind))
        return len(variables) - 1

    def row(name, coeffs, lhs, rhs):
        rows.append(LinearRow(len(rows), name, _clean(coeffs), lhs, rhs))

    # w = x_b * x_c written with big-M rows, plus U x_b + x_c <= U
    U = float(rng.integers(1, 4))
    xb = var("xb", 0.0, 1.0, VarKind.BINARY)
    xc = var("xc", 0.0, U)
    w = var("w", 0.0, U)
    row("w_le_ub_xb", {w: 1.0, xb: -U}, -INF, 0.0)
    row("w_le_xc", {w: 1.0, xc: -1.0}, -INF, 0.0)
    row("w_ge_xc_bigm", {w: -1.0, xc: 1.0, xb: U}, -INF, U)
    row("link", {xb: U, xc: 1.0}, -INF, U)
    objective[w] = -float(rng.integers(1, 6))
    objective[xc] = float(rng.uniform(-0.5, 0.5))

    relations = []
    if rng.random() < 0.5:
        yb = var("yb", 0.0, 1.0, VarKind.BINARY)
        yc = var("yc", 0.0, 2.0)
        v = var("v", 0.0, 2.0)
        relations.append(ProductRelation(0, yb, yc, v, sense=Sense.EQ))
        row("budget", {yb: 1.0, yc: 1.0}, -INF, 2.0)
        objective[v] = -float(rng.integers(1, 4))
        objective[yb] = float(rng.integers(0, 3))

    n_items = int(rng.integers(2, 6)) if n_items is None else n_items
    weights = rng.integers(1, 10, size=n_items)
    values = rng.integers(1, 10, size=n_items)
    items = [var(f"y{k}", 0.0, 1.0, VarKind.BINARY) for k in range(n_items)]
    row("capacity", {y: float(wt) for y, wt in zip(items, weights)}, -INF, float(max(1, weights.sum() // 2)))
    for y, value in zip(items, values):
        objective[y] = -float(value)

    return Problem(tuple(variables), tuple(rows), _clean(objective), tuple(relations), "mixed")


def knapsack_instance(rng: np.random.Generator, n_items: int = 6) -> Problem:
    """Binary knapsack with no products, a control instance for detection."""
    weights = rng.integers(1, 10, size=n_items)
    values = rng.integers(1, 10, size=n_items)
    variables = tuple(Variable(k, f"y{k}", 0.0, 1.0, VarKind.BINARY) for k in range(n_items))
    capacity = float(max(1, weights.sum() // 2))
    rows = (LinearRow(0, "capacity", {k: float(wt) for k, wt in enumerate(weights)}, -INF, capacity),)
    objective = {k: -float(v) for k, v in enumerate(values)}
    return Problem(variables, rows, objective, (), "knapsack")


def random_lp(rng: np.random.Generator, max_vars: int = 6, max_rows: int = 8) -> LpInstance:
    """Bounded, feasible LP: box [-5, 5]^n and rows satisfied by a random interior point."""
    n = int(rng.integers(1, max_vars + 1))
    m = int(rng.integers(0, max_rows + 1))
    lb = rng.integers(-5, 1, size=n).astype(float)
    ub = lb + rng.integers(1, 6, size=n).astype(float)
    x0 = rng.uniform(lb, ub)
    rows = []
    for r in range(m):
        a = rng.integers(-4, 5, size=n).astype(float)
        coeffs = {k: float(a[k]) for k in range(n) if a[k] != 0.0}
        activity = float(sum(c * x0[k] for k, c in coeffs.items()))
        rhs = math.ceil((activity + float(rng.uniform(0.0, 2.0))) * 1000.0) / 1000.0
        rows.append(LpRow(f"r{r}", coeffs, rhs))
    objective = tuple(float(c) for c in rng.integers(-5, 6, size=n))
    return LpInstance(n, tuple(lb), tuple(ub), objective, tuple(rows), tuple(f"x{k}" for k in range(n)))


def write_corpus(out_dir: str, count: int, seed: int) -> List[str]:
    """Write `count` mixed instances (plus one knapsack and one big-M file) to out_dir."""
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def save(problem: Problem, stem: str):
        from dataclasses import replace
        path = os.path.join(out_dir, stem + INSTANCE_SUFFIX)
        with open(path, "w", encoding="utf-8") as f:
            f.write(write_instance(replace(problem, name=stem)))
        paths.append(path)

    for k in range(count):
        save(mixed_instance(rng), f"mixed_{seed}_{k:03d}")
    save(knapsack_instance(rng), f"knapsack_{seed}")
    save(bigm_instance(rng)[0], f"bigm_{seed}")
    logger.info("Wrote %d instance(s) to %s", len(paths), out_dir)
    return paths
