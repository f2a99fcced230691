#!/usr/bin/env python3
"""
Tests for implicit product detection.

The round-trip test encodes random relations as big-M rows and checks that
detection gives them back.
"""

import sys
from dataclasses import replace

import numpy as np
import pytest

from detect import (
    MAX_PAIRS_PER_GROUP,
    CandidateRelation,
    CandidateSource,
    collect_candidates,
    derive_product,
    detect_implicit_products,
    detect_with_stats,
    reject_reason,
)
from instance_gen import bigm_instance, mixed_instance
from model import INF, LinearRow, Problem, ProductRelation, Sense, Variable, VarKind

ROW = CandidateSource.THREE_VAR_ROW


def candidate(a, b, c, d, source=ROW):
    return CandidateRelation(a, b, c, d, source, 0, 1, 2)


def mccormick_rows_problem():
    """w = x_i * x_j written as four linear rows, x_i binary, x_j in [0, 1]."""
    variables = (Variable(0, "xi", 0.0, 1.0, VarKind.BINARY), Variable(1, "xj", 0.0, 1.0), Variable(2, "w", 0.0, 1.0))
    rows = (
        LinearRow(0, "w_le_xi", {0: -1.0, 2: 1.0}, -INF, 0.0),
        LinearRow(1, "w_ge_0", {2: -1.0}, -INF, 0.0),
        LinearRow(2, "w_le_xj", {1: -1.0, 2: 1.0}, -INF, 0.0),
        LinearRow(3, "w_ge_bigm", {0: 1.0, 1: 1.0, 2: -1.0}, -INF, 1.0),
    )
    return Problem(variables, rows, {2: -1.0}, (), "mccormick_rows")


def test_derive_product_example():
    """x_i + w - x_j <= 1 and -2 x_i + w <= 0 give w <= x_i * x_j."""
    rel1 = CandidateRelation(1.0, 1.0, -1.0, 1.0, ROW, 0, 2, 1)
    rel2 = CandidateRelation(-2.0, 1.0, 0.0, 0.0, CandidateSource.IMPLIED_BOUND, 0, 2, None)
    relation = derive_product(rel1, rel2)
    assert (relation.i, relation.j, relation.w) == (0, 1, 2)
    assert (relation.A, relation.B, relation.C, relation.D) == (0.0, 1.0, 0.0, 0.0)
    assert relation.sense is Sense.LE


def test_reject_reasons():
    assert reject_reason(candidate(1, 1, 0, 1), candidate(-1, -1, 1, 0)) == "b1*b2 <= 0"
    assert reject_reason(candidate(0, 1, 1, 1), candidate(0, 1, 0, 0)) == "a1 = a2 = 0"
    assert reject_reason(candidate(1, 1, 1, 1), candidate(2, 1, 0, 0)) == "binary coefficients do not have opposite signs"
    assert reject_reason(candidate(1, 1, 1, 1), candidate(-1, 2, 2, 0)) == "gamma = 0"
    assert reject_reason(candidate(1, 1, -1, 1), candidate(-2, 1, 0, 0)) is None
    assert derive_product(candidate(0, 1, 1, 1), candidate(0, 1, 0, 0)) is None


def test_derivation_is_scale_invariant():
    rng = np.random.default_rng(12)
    for _ in range(100):
        a1, a2 = rng.uniform(0.5, 5.0), -rng.uniform(0.5, 5.0)
        b = rng.uniform(0.5, 5.0) * rng.choice([-1.0, 1.0])
        c1, c2, d1, d2 = rng.uniform(-5.0, 5.0, size=4)
        rel1, rel2 = candidate(a1, b, c1, d1), candidate(a2, b * rng.uniform(0.5, 2.0), c2, d2)
        base = derive_product(rel1, rel2)
        if base is None:
            continue
        lam, mu = rng.uniform(0.1, 10.0, size=2)
        scaled = derive_product(candidate(*(lam * v for v in rel1.form())), candidate(*(mu * v for v in rel2.form())))
        assert scaled.sense is base.sense
        got = (scaled.A, scaled.B, scaled.C, scaled.D)
        assert got == pytest.approx((base.A, base.B, base.C, base.D), rel=1e-9, abs=1e-9)


def test_derived_relations_are_sound_on_grid():
    """Points meeting rel1 at x_i = 1 or rel2 at x_i = 0 satisfy the derived relation."""
    rng = np.random.default_rng(99)
    grid = np.linspace(-10.0, 10.0, 21)
    W, XJ = np.meshgrid(grid, grid)
    derived = 0
    for _ in range(1000):
        a1, a2 = rng.uniform(0.0, 10.0), -rng.uniform(0.0, 10.0)
        b1, c1, d1, b2, c2, d2 = rng.uniform(-10.0, 10.0, size=6)
        if abs(c2 * b1 - b2 * c1) < 1e-3:
            continue
        relation = derive_product(candidate(a1, b1, c1, d1), candidate(a2, b2, c2, d2))
        if relation is None:
            continue
        derived += 1
        scale = 1.0 + 10.0 * (abs(relation.A) + abs(relation.B) + abs(relation.C) + abs(relation.D))
        for xi, a, b, c, d in ((1.0, a1, b1, c1, d1), (0.0, 0.0, b2, c2, d2)):
            holds = a * xi + b * W + c * XJ <= d
            gap = relation.A * xi + relation.B * W + relation.C * XJ + relation.D - xi * XJ
            if relation.sense is Sense.LE:
                assert np.all(gap[holds] <= 1e-9 * scale)
            else:
                assert np.all(gap[holds] >= -1e-9 * scale)
    assert derived > 300


def test_bigm_encoding_round_trip():
    """1000 random relations encoded as big-M rows come back from detection."""
    rng = np.random.default_rng(7)
    for _ in range(1000):
        problem, original = bigm_instance(rng)
        found = detect_implicit_products(problem)
        matches = [
            rel for rel in found
            if (rel.i, rel.j, rel.w) == (original.i, original.j, original.w) and rel.sense is original.sense
        ]
        assert matches, f"relation {original} not recovered"
        want = (original.A, original.B, original.C, original.D)
        assert any((rel.A, rel.B, rel.C, rel.D) == pytest.approx(want, rel=1e-9, abs=1e-9) for rel in matches)


def test_mccormick_rows_give_both_sides_of_the_product():
    relations = detect_implicit_products(mccormick_rows_problem())
    assert [rel.id for rel in relations] == [0, 1, 2]
    products = [rel for rel in relations if (rel.i, rel.j, rel.w) == (0, 1, 2)]
    assert {rel.sense for rel in products} == {Sense.LE, Sense.GE}
    for rel in products:
        assert (rel.A, rel.B, rel.C, rel.D) == (0.0, 1.0, 0.0, 0.0)


def test_swapped_roles_are_kept():
    """w_ge_bigm with ub(xj) also reads x_i + x_j - 1 <= x_i * w."""
    relations = detect_implicit_products(mccormick_rows_problem())
    swapped = [rel for rel in relations if (rel.i, rel.j, rel.w) == (0, 2, 1)]
    assert len(swapped) == 1
    rel = swapped[0]
    assert (rel.A, rel.B, rel.C, rel.D) == (1.0, 1.0, 0.0, -1.0)
    assert rel.sense is Sense.LE
    assert rel.sources == ("w_ge_bigm", "ub(xj)")


def test_extra_row_on_the_pair_keeps_the_encoded_relation():
    """A redundant x_j + 0.01 w <= 6 row must not hide the big-M relation."""
    rng = np.random.default_rng(11)
    for _ in range(300):
        problem, original = bigm_instance(rng)
        cap = LinearRow(len(problem.rows), "xj_cap", {1: 1.0, 2: 0.01}, -INF, 6.0)
        padded = replace(problem, rows=problem.rows + (cap,))
        found = detect_implicit_products(padded)
        want = (original.A, original.B, original.C, original.D)
        assert any(
            (rel.i, rel.j, rel.w) == (0, 1, 2) and rel.sense is original.sense
            and (rel.A, rel.B, rel.C, rel.D) == pytest.approx(want, rel=1e-9, abs=1e-9)
            for rel in found
        ), f"relation {original} lost"


def test_clique_and_two_variable_row_combine():
    """x_i + w <= 1 (both binary) and w <= x_j give x_j - w >= x_i * x_j."""
    variables = (Variable(0, "xi", 0.0, 1.0, VarKind.BINARY), Variable(1, "w", 0.0, 1.0, VarKind.BINARY),
                 Variable(2, "xj", 0.0, 1.0))
    rows = (
        LinearRow(0, "pack", {0: 1.0, 1: 1.0}, -INF, 1.0),
        LinearRow(1, "w_le_xj", {1: 1.0, 2: -1.0}, -INF, 0.0),
    )
    relations = detect_implicit_products(Problem(variables, rows, {}, (), "clique_pair"))
    assert len(relations) == 1
    rel = relations[0]
    assert (rel.i, rel.j, rel.w) == (0, 2, 1)
    assert (rel.A, rel.B, rel.C, rel.D) == (0.0, -1.0, 1.0, 0.0)
    assert rel.sense is Sense.GE
    assert rel.sources == ("pack", "w_le_xj")
    for xi, w, xj in ((0.0, 0.0, 0.5), (0.0, 1.0, 1.0), (1.0, 0.0, 0.3), (1.0, 0.0, 1.0)):
        assert rel.violation([xi, w, xj]) == 0.0


def test_mccormick_rows_candidate_count():
    assert len(collect_candidates(mccormick_rows_problem())) >= 8


def test_no_binaries_means_no_candidates():
    variables = (Variable(0, "x", 0.0, 1.0), Variable(1, "y", 0.0, 1.0), Variable(2, "w", 0.0, 1.0))
    rows = (LinearRow(0, "r", {0: 1.0, 1: 1.0, 2: -1.0}, -INF, 1.0),)
    problem = Problem(variables, rows, {}, (), "continuous")
    assert len(collect_candidates(problem)) == 0
    assert detect_implicit_products(problem) == []


def test_clique_row_becomes_candidate():
    variables = (Variable(0, "xi", 0.0, 1.0, VarKind.BINARY), Variable(1, "w", 0.0, 1.0, VarKind.BINARY))
    rows = (LinearRow(0, "pack", {0: 1.0, 1: 1.0}, -INF, 1.0),)
    store = collect_candidates(Problem(variables, rows, {}, (), "clique"))
    forms = [cand.form() for cand in store.by_pair[(0, 1)]]
    assert (1.0, 1.0, 0.0, 1.0) in forms


def test_existing_relations_are_not_repeated():
    problem = mccormick_rows_problem()
    stated = problem.with_relations([ProductRelation(0, 0, 1, 2, sense=Sense.EQ)])
    found = detect_implicit_products(stated)
    assert [(rel.i, rel.j, rel.w) for rel in found] == [(0, 2, 1)]
    assert found[0].id == 1


def test_pairs_per_group_are_capped():
    rng = np.random.default_rng(3)
    for _ in range(50):
        result = detect_with_stats(mixed_instance(rng))
        assert result.pairs_tried <= MAX_PAIRS_PER_GROUP * result.groups


def test_implicit_ids_follow_explicit_relations():
    rng = np.random.default_rng(4)
    for _ in range(30):
        problem = mixed_instance(rng)
        found = detect_implicit_products(problem)
        assert [rel.id for rel in found] == list(range(len(problem.relations), len(problem.relations) + len(found)))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
