#!/usr/bin/env python3
"""
Tests for the native instance format and report serialization.
"""

import json
import os
import sys

import numpy as np
import pytest

from instance_gen import cut_validity_instance, mixed_instance
from instance_io import (
    InstanceFormatError,
    Report,
    column_names,
    parse_instance,
    read_instance_file,
    read_report,
    write_instance,
    write_report,
    write_report_file,
)
from model import INF, RelationOrigin, Sense, ValidationError

INSTANCES_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "instances")

BIGM_DOC = """{
  "version": 1,
  "variables": [
    {"name": "x1", "lb": 0, "ub": 1, "kind": "binary"},
    {"name": "x2", "lb": 0, "ub": 1, "kind": "continuous"},
    {"name": "w", "lb": "-inf", "ub": "inf", "kind": "continuous"}
  ],
  "objective": {"sense": "min", "coeffs": {"w": -1}},
  "rows": [
    {"name": "r1", "lhs": "-inf", "rhs": 0, "coeffs": {"w": -1}},
    {"name": "r2", "lhs": "-inf", "rhs": 0, "coeffs": {"w": 1, "x1": -1}},
    {"name": "r3", "lhs": "-inf", "rhs": 0, "coeffs": {"w": 1, "x2": -1}},
    {"name": "r4", "lhs": "-inf", "rhs": 1, "coeffs": {"w": -1, "x2": 1, "x1": 1}}
  ]
}
"""


def doc_with(**changes):
    doc = json.loads(BIGM_DOC)
    doc.update(changes)
    return json.dumps(doc, indent=2)


def test_parse_bigm_document():
    """Three variables, four rows, no relations; infinities read from strings."""
    problem = parse_instance(BIGM_DOC)
    assert problem.n_vars == 3
    assert len(problem.rows) == 4
    assert problem.relations == ()
    assert problem.variables[2].lb == -INF and problem.variables[2].ub == INF
    assert problem.binary_ids == (0,)
    assert dict(problem.rows[3].coeffs) == {0: 1.0, 1: 1.0, 2: -1.0}


def test_parse_empty_document():
    problem = parse_instance('{"version": 1, "variables": [], "rows": []}')
    assert problem.n_vars == 0
    assert problem.rows == ()


def test_undeclared_variable_is_named():
    doc = json.loads(BIGM_DOC)
    doc["rows"][0]["coeffs"] = {"x9": 1}
    with pytest.raises(InstanceFormatError) as info:
        parse_instance(json.dumps(doc, indent=2))
    assert "x9" in str(info.value)
    assert info.value.path == "$.rows[0].coeffs.x9"
    assert info.value.line is not None


def test_unknown_field_rejected():
    with pytest.raises(InstanceFormatError, match="unknown field 'extra'"):
        parse_instance(doc_with(extra=1))


def test_bad_version_rejected():
    with pytest.raises(InstanceFormatError, match="version"):
        parse_instance(doc_with(version=2))


def test_nan_literal_rejected():
    text = BIGM_DOC.replace('"coeffs": {"w": -1}}', '"coeffs": {"w": NaN}}', 1)
    with pytest.raises(InstanceFormatError):
        parse_instance(text)


def test_bad_kind_and_crossed_bounds():
    doc = json.loads(BIGM_DOC)
    doc["variables"][0]["kind"] = "integer"
    with pytest.raises(InstanceFormatError, match="bad kind"):
        parse_instance(json.dumps(doc))
    doc = json.loads(BIGM_DOC)
    doc["variables"][1]["lb"] = 2
    with pytest.raises(InstanceFormatError, match="lb 2.0 > ub 1.0"):
        parse_instance(json.dumps(doc))


def test_syntax_error_carries_line():
    with pytest.raises(InstanceFormatError) as info:
        parse_instance('{\n  "version": 1,\n  "variables": [\n}')
    assert info.value.line == 4


def test_binary_bounds_fail_validation():
    doc = json.loads(BIGM_DOC)
    doc["variables"][0]["ub"] = 2
    with pytest.raises(ValidationError):
        parse_instance(json.dumps(doc))


def test_products_default_to_explicit_equality():
    doc = json.loads(BIGM_DOC)
    doc["products"] = [{"i": "x1", "j": "x2", "w": "w"}]
    problem = parse_instance(json.dumps(doc))
    (rel,) = problem.relations
    assert (rel.i, rel.j, rel.w, rel.sense) == (0, 1, 2, Sense.EQ)
    assert rel.is_explicit_form
    assert rel.origin is RelationOrigin.EXPLICIT


def test_general_products_are_implicit():
    doc = json.loads(BIGM_DOC)
    doc["products"] = [{"i": "x1", "j": "x2", "w": "w", "A": 0.5, "B": 2, "D": -1, "sense": "<="}]
    (rel,) = parse_instance(json.dumps(doc)).relations
    assert rel.origin is RelationOrigin.IMPLICIT
    assert (rel.A, rel.B, rel.C, rel.D, rel.sense) == (0.5, 2.0, 0.0, -1.0, Sense.LE)


def test_general_product_needs_binary_xi():
    doc = json.loads(BIGM_DOC)
    doc["products"] = [{"i": "x2", "j": "x1", "w": "w", "C": 1, "sense": ">="}]
    with pytest.raises(ValidationError, match="binary x_i"):
        parse_instance(json.dumps(doc))
    doc["products"] = [{"i": "x2", "j": "x1", "w": "w"}]
    (rel,) = parse_instance(json.dumps(doc)).relations
    assert rel.origin is RelationOrigin.EXPLICIT


def test_write_instance_is_idempotent():
    """parse(write(parse(doc))) normalizes to the same document."""
    rng = np.random.default_rng(11)
    problems = [parse_instance(BIGM_DOC)]
    problems += [cut_validity_instance(rng)[0] for _ in range(10)]
    problems += [cut_validity_instance(rng, general=True)[0] for _ in range(10)]
    problems += [mixed_instance(rng) for _ in range(10)]
    for problem in problems:
        once = write_instance(problem)
        again = write_instance(parse_instance(once))
        assert once == again


def test_shipped_instances_parse():
    names = sorted(f for f in os.listdir(INSTANCES_DIR) if f.endswith(".rlt.json"))
    assert "worked_example.rlt.json" in names
    for name in names:
        problem = read_instance_file(os.path.join(INSTANCES_DIR, name))
        assert problem.name == name[: -len(".rlt.json")]


def test_report_csv_single_row():
    report = Report("root")
    report.add(round=0, dual_bound=-0.5, cuts_added=0, lp_iterations=3)
    lines = write_report(report, "csv").split("\r\n")
    assert lines[0] == ",".join(column_names("root"))
    assert lines[1] == "0,-0.5,0,3"
    assert lines[2] == ""


def test_report_real_round_trips_bit_exactly():
    report = Report("root")
    report.add(round=0, dual_bound=0.1, cuts_added=0, lp_iterations=0)
    cell = write_report(report, "csv").split("\r\n")[1].split(",")[1]
    assert float(cell) == 0.1
    back = read_report(write_report(report, "json"))
    assert back.rows[0]["dual_bound"] == 0.1


def test_report_rows_sorted_by_key():
    report = Report("root")
    report.add(round=2, dual_bound=1.0, cuts_added=1, lp_iterations=5)
    report.add(round=1, dual_bound=0.0, cuts_added=2, lp_iterations=4)
    text = write_report(report, "csv")
    assert text.split("\r\n")[1].startswith("1,")
    assert text == write_report(report, "csv")


def test_report_json_round_trip_with_infinities(tmp_path):
    report = Report("runs", metadata={"seed": 3, "limits": [INF, -INF]})
    report.add(instance="a", variant="off", status="infeasible", primal=INF, dual=INF, nodes=1, error="")
    path = write_report_file(report, str(tmp_path / "runs.json"))
    with open(path, encoding="utf-8") as f:
        back = read_report(f.read())
    assert back.kind == "runs"
    assert back.metadata == {"seed": 3, "limits": [INF, -INF]}
    assert back.rows == [{"instance": "a", "variant": "off", "status": "infeasible", "primal": INF,
                          "dual": INF, "nodes": 1, "error": ""}]


def test_csv_file_keeps_crlf(tmp_path):
    report = Report("root")
    report.add(round=0, dual_bound=1.0, cuts_added=0, lp_iterations=1)
    path = write_report_file(report, str(tmp_path / "root.csv"))
    with open(path, "rb") as f:
        assert f.read().count(b"\r\n") == 2


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
