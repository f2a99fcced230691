#!/usr/bin/env python3
"""
Tests for the problem model: validation and the product index.
"""

import sys

import pytest

from model import (
    INF,
    LinearRow,
    Problem,
    ProductRelation,
    RelationOrigin,
    Sense,
    ValidationError,
    Variable,
    VarKind,
    build_product_index,
    validate,
)


def two_var_problem(**overrides):
    variables = (Variable(0, "x1", 0.0, 1.0), Variable(1, "x2", 0.0, 1.0))
    rows = (LinearRow(0, "budget", {0: 1.0, 1: 1.0}, -INF, 1.0),)
    fields = dict(variables=variables, rows=rows, objective={0: -1.0}, relations=(), name="two")
    fields.update(overrides)
    return Problem(**fields)


def product_problem(relations):
    variables = tuple(Variable(k, f"x{k}", 0.0, 1.0) for k in range(6))
    return Problem(variables, (), {}, tuple(relations), "products")


def test_well_formed_problem_is_valid():
    """A small well-formed problem has no validation issues."""
    assert validate(two_var_problem()) == []


def test_binary_with_ub_two_is_reported():
    """One issue, naming the variable."""
    variables = (Variable(0, "x1", 0.0, 2.0, VarKind.BINARY), Variable(1, "x2", 0.0, 1.0))
    issues = validate(two_var_problem(variables=variables))
    assert len(issues) == 1
    assert "x1" in issues[0].location


def test_relation_with_zero_b_is_reported():
    problem = product_problem([ProductRelation(0, 0, 1, 2, B=0.0)])
    issues = validate(problem)
    assert len(issues) == 1
    assert issues[0].location == "relation 0"


def test_bad_rows_are_reported():
    rows = (
        LinearRow(0, "free", {0: 1.0}, -INF, INF),
        LinearRow(1, "crossed", {0: 1.0}, 2.0, 1.0),
        LinearRow(2, "zero", {0: 0.0}, -INF, 1.0),
        LinearRow(3, "dangling", {7: 1.0}, -INF, 1.0),
    )
    issues = validate(two_var_problem(rows=rows))
    locations = [issue.location for issue in issues]
    assert locations == ["row 'free'", "row 'crossed'", "row 'zero'", "row 'dangling'"]


def test_implicit_relation_needs_binary_multiplier():
    rel = ProductRelation(0, 0, 1, 2, origin=RelationOrigin.IMPLICIT)
    issues = validate(product_problem([rel]))
    assert [issue.message for issue in issues] == ["implicit relation needs a binary x_i"]


def test_validation_error_summarizes_issues():
    problem = product_problem([ProductRelation(0, 0, 1, 2, B=0.0)])
    err = ValidationError(validate(problem))
    assert len(err.issues) == 1
    assert "relation 0" in str(err)


def test_one_sided_rows_negate_lower_side():
    row = LinearRow(0, "range", {0: 2.0, 1: -1.0}, 1.0, 3.0)
    le, ge = row.one_sided()
    assert (le.side, le.rhs, dict(le.coeffs)) == (Sense.LE, 3.0, {0: 2.0, 1: -1.0})
    assert (ge.side, ge.rhs, dict(ge.coeffs)) == (Sense.GE, -1.0, {0: -2.0, 1: 1.0})
    assert row.sense is None
    assert LinearRow(1, "eq", {0: 1.0}, 2.0, 2.0).sense is Sense.EQ


def test_relation_violation_by_sense():
    x = [1.0, 0.5, 0.2]
    le = ProductRelation(0, 0, 1, 2, sense=Sense.LE)  # w <= x0 x1
    ge = ProductRelation(0, 0, 1, 2, sense=Sense.GE)
    eq = ProductRelation(0, 0, 1, 2, sense=Sense.EQ)
    assert le.violation(x) == 0.0
    assert ge.violation(x) == pytest.approx(0.3)
    assert eq.violation(x) == pytest.approx(0.3)


def test_index_single_relation():
    index = build_product_index(product_problem([ProductRelation(0, 1, 2, 3)]))
    assert index.partners(1) == ((2, 0),)
    assert index.partners(2) == ((1, 0),)
    assert index.relations_for(2, 1) == (0,)
    assert index.relations_for(1, 2) == (0,)


def test_index_empty():
    index = build_product_index(product_problem([]))
    assert len(index) == 0
    assert index.partners(0) == ()


def test_index_shared_variable():
    index = build_product_index(product_problem([ProductRelation(0, 1, 2, 4), ProductRelation(1, 1, 3, 5)]))
    assert index.partners(1) == ((2, 0), (3, 1))


def test_index_drops_duplicate_explicit_relation():
    rels = [ProductRelation(0, 1, 2, 3), ProductRelation(1, 2, 1, 3), ProductRelation(2, 1, 2, 3, sense=Sense.LE)]
    index = build_product_index(product_problem(rels))
    assert index.duplicates == (1,)
    assert index.relations_for(1, 2) == (0, 2)


def test_index_lists_each_relation_once_per_variable():
    """Every relation appears exactly once in the partner list of both of its variables."""
    rels = [ProductRelation(0, 0, 1, 4), ProductRelation(1, 1, 2, 5, sense=Sense.LE),
            ProductRelation(2, 3, 3, 5), ProductRelation(3, 0, 2, 4, sense=Sense.GE)]
    index = build_product_index(product_problem(rels))
    for rel in rels:
        for var in {rel.i, rel.j}:
            assert [rid for _, rid in index.partners(var)].count(rel.id) == 1
        assert rel.id in index.relations_for(rel.j, rel.i)


def test_with_relations_renumbers():
    problem = product_problem([ProductRelation(0, 0, 1, 4)])
    extended = problem.with_relations([ProductRelation(9, 2, 3, 5)])
    assert [rel.id for rel in extended.relations] == [0, 1]
    assert extended.product_vars == (0, 1, 2, 3)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
