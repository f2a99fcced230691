"""
Native instance format (.rlt.json) and report serialization.

Instances are versioned JSON documents; reports are typed tables written
as CSV (for spreadsheets) or JSON (lossless, readable back).
"""

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from model import (
    INF,
    LinearRow,
    Problem,
    ProductRelation,
    RelationOrigin,
    RltError,
    Sense,
    ValidationError,
    Variable,
    VarKind,
    validate,
)

FORMAT_VERSION = 1
INSTANCE_SUFFIX = ".rlt.json"

_TOP_FIELDS = {"version", "name", "variables", "objective", "rows", "products"}
_VARIABLE_FIELDS = {"name", "lb", "ub", "kind"}
_OBJECTIVE_FIELDS = {"sense", "coeffs"}
_ROW_FIELDS = {"name", "lhs", "rhs", "coeffs"}
_PRODUCT_FIELDS = {"i", "j", "w", "A", "B", "C", "D", "sense"}


class InstanceFormatError(RltError):
    """Raised for malformed instance documents; carries field path and line."""

    def __init__(self, message: str, path: str = "", line: Optional[int] = None):
        self.path = path
        self.line = line
        where = path or "document"
        if line is not None:
            where = f"{where} (line {line})"
        super().__init__(f"{where}: {message}")


def _reject_constant(token):
    raise ValueError(f"non-finite literal {token} is not allowed; use the strings \"inf\"/\"-inf\" for bounds")


def _line_of(text: str, needle: Optional[str]) -> Optional[int]:
    """Best-effort line number of the first occurrence of a quoted token."""
    if not needle:
        return None
    match = re.search(re.escape(json.dumps(needle)), text)
    if match is None:
        return None
    return text.count("\n", 0, match.start()) + 1


class _Reader:
    """Walks a decoded document, raising with field paths on bad data."""

    def __init__(self, text: str):
        self.text = text

    def fail(self, message: str, path: str, token: Optional[str] = None):
        raise InstanceFormatError(message, path, _line_of(self.text, token))

    def check_fields(self, obj, allowed, required, path):
        if not isinstance(obj, dict):
            self.fail("expected an object", path)
        unknown = sorted(set(obj) - allowed)
        if unknown:
            self.fail(f"unknown field '{unknown[0]}'", f"{path}.{unknown[0]}", unknown[0])
        for name in required:
            if name not in obj:
                self.fail(f"missing field '{name}'", path)

    def number(self, value, path, allow_inf=False) -> float:
        if isinstance(value, bool):
            self.fail("expected a number, got a boolean", path)
        if isinstance(value, (int, float)):
            result = float(value)
            if math.isnan(result) or math.isinf(result):
                self.fail("non-finite number", path)
            return result
        if allow_inf and value == "inf":
            return INF
        if allow_inf and value == "-inf":
            return -INF
        expected = "a number or \"inf\"/\"-inf\"" if allow_inf else "a finite number"
        self.fail(f"expected {expected}, got {value!r}", path)

    def string(self, value, path) -> str:
        if not isinstance(value, str) or not value:
            self.fail("expected a non-empty string", path)
        return value

    def coeffs(self, obj, names: Mapping[str, int], path) -> Dict[int, float]:
        if not isinstance(obj, dict):
            self.fail("expected an object mapping variable names to numbers", path)
        result: Dict[int, float] = {}
        for name, value in obj.items():
            if name not in names:
                self.fail(f"unknown variable '{name}'", f"{path}.{name}", name)
            coef = self.number(value, f"{path}.{name}")
            if coef != 0.0:
                result[names[name]] = coef
        return dict(sorted(result.items()))


def parse_instance(text: str) -> Problem:
    """Parse a native instance document into a validated Problem.

    Parsing is total: either a fully valid Problem comes back or
    InstanceFormatError / ValidationError is raised.
    """
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise InstanceFormatError(f"syntax error: {e.msg}", "document", e.lineno) from e
    except ValueError as e:
        raise InstanceFormatError(str(e), "document") from e

    reader = _Reader(text)
    reader.check_fields(doc, _TOP_FIELDS, ("version", "variables", "rows"), "$")
    if doc["version"] != FORMAT_VERSION or isinstance(doc["version"], bool):
        reader.fail(f"unsupported version {doc['version']!r} (expected {FORMAT_VERSION})", "$.version")
    name = reader.string(doc.get("name", "problem"), "$.name")

    if not isinstance(doc["variables"], list):
        reader.fail("expected an array", "$.variables")
    variables: List[Variable] = []
    names: Dict[str, int] = {}
    for idx, entry in enumerate(doc["variables"]):
        path = f"$.variables[{idx}]"
        reader.check_fields(entry, _VARIABLE_FIELDS, ("name", "lb", "ub", "kind"), path)
        var_name = reader.string(entry["name"], f"{path}.name")
        if var_name in names:
            reader.fail(f"duplicate variable name '{var_name}'", f"{path}.name", var_name)
        lb = reader.number(entry["lb"], f"{path}.lb", allow_inf=True)
        ub = reader.number(entry["ub"], f"{path}.ub", allow_inf=True)
        try:
            kind = VarKind(entry["kind"])
        except ValueError:
            reader.fail(f"bad kind {entry['kind']!r} (expected continuous or binary)", f"{path}.kind", var_name)
        if lb > ub:
            reader.fail(f"lb {lb} > ub {ub} for '{var_name}'", path, var_name)
        names[var_name] = idx
        variables.append(Variable(idx, var_name, lb, ub, kind))

    objective: Dict[int, float] = {}
    if "objective" in doc:
        reader.check_fields(doc["objective"], _OBJECTIVE_FIELDS, ("coeffs",), "$.objective")
        if doc["objective"].get("sense", "min") != "min":
            reader.fail("only minimization is supported", "$.objective.sense")
        objective = reader.coeffs(doc["objective"]["coeffs"], names, "$.objective.coeffs")

    if not isinstance(doc["rows"], list):
        reader.fail("expected an array", "$.rows")
    rows: List[LinearRow] = []
    row_names = set()
    for idx, entry in enumerate(doc["rows"]):
        path = f"$.rows[{idx}]"
        reader.check_fields(entry, _ROW_FIELDS, ("name", "lhs", "rhs", "coeffs"), path)
        row_name = reader.string(entry["name"], f"{path}.name")
        if row_name in row_names:
            reader.fail(f"duplicate row name '{row_name}'", f"{path}.name", row_name)
        row_names.add(row_name)
        lhs = reader.number(entry["lhs"], f"{path}.lhs", allow_inf=True)
        rhs = reader.number(entry["rhs"], f"{path}.rhs", allow_inf=True)
        coeffs = reader.coeffs(entry["coeffs"], names, f"{path}.coeffs")
        rows.append(LinearRow(idx, row_name, coeffs, lhs, rhs))

    products = doc.get("products", [])
    if not isinstance(products, list):
        reader.fail("expected an array", "$.products")
    relations: List[ProductRelation] = []
    for idx, entry in enumerate(products):
        path = f"$.products[{idx}]"
        reader.check_fields(entry, _PRODUCT_FIELDS, ("i", "j", "w"), path)
        roles = {}
        for role in ("i", "j", "w"):
            var_name = reader.string(entry[role], f"{path}.{role}")
            if var_name not in names:
                reader.fail(f"unknown variable '{var_name}'", f"{path}.{role}", var_name)
            roles[role] = names[var_name]
        A = reader.number(entry.get("A", 0.0), f"{path}.A")
        B = reader.number(entry.get("B", 1.0), f"{path}.B")
        C = reader.number(entry.get("C", 0.0), f"{path}.C")
        D = reader.number(entry.get("D", 0.0), f"{path}.D")
        try:
            sense = Sense(entry.get("sense", "="))
        except ValueError:
            reader.fail(f"bad sense {entry.get('sense')!r} (expected <=, >= or =)", f"{path}.sense")
        relation = ProductRelation(idx, roles["i"], roles["j"], roles["w"], A, B, C, D, sense)
        if not relation.is_explicit_form:
            # general coefficients only come from the binary x_i derivation
            relation = replace(relation, origin=RelationOrigin.IMPLICIT)
        relations.append(relation)

    problem = Problem(tuple(variables), tuple(rows), objective, tuple(relations), name)
    issues = validate(problem)
    if issues:
        raise ValidationError(issues)
    return problem


def _bound(value: float):
    if value == INF:
        return "inf"
    if value == -INF:
        return "-inf"
    return value


def write_instance(problem: Problem) -> str:
    """Serialize a Problem as a native instance document."""
    names = [var.name for var in problem.variables]

    def coeff_map(coeffs):
        return {names[k]: coeffs[k] for k in sorted(coeffs)}

    doc = {
        "version": FORMAT_VERSION,
        "name": problem.name,
        "variables": [
            {"name": v.name, "lb": _bound(v.lb), "ub": _bound(v.ub), "kind": v.kind.value}
            for v in problem.variables
        ],
        "objective": {"sense": "min", "coeffs": coeff_map(problem.objective)},
        "rows": [
            {"name": r.name, "lhs": _bound(r.lhs), "rhs": _bound(r.rhs), "coeffs": coeff_map(r.coeffs)}
            for r in problem.rows
        ],
        "products": [
            {"i": names[rel.i], "j": names[rel.j], "w": names[rel.w],
             "A": rel.A, "B": rel.B, "C": rel.C, "D": rel.D, "sense": rel.sense.value}
            for rel in problem.relations
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def read_instance_file(path: str) -> Problem:
    """Read and validate an instance; the problem is named after the file stem."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    problem = parse_instance(text)
    if problem.name == "problem":
        stem = path.replace("\\", "/").rsplit("/", 1)[-1]
        if stem.endswith(INSTANCE_SUFFIX):
            stem = stem[: -len(INSTANCE_SUFFIX)]
        problem = replace(problem, name=stem)
    return problem


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

STR, INT, REAL = "str", "int", "real"

# column layout and sort key per report kind
REPORT_KINDS: Dict[str, Tuple[Tuple[Tuple[str, str], ...], Tuple[str, ...]]] = {
    "runs": ((
        ("instance", STR), ("variant", STR), ("status", STR), ("primal", REAL), ("dual", REAL),
        ("root_bound", REAL), ("nodes", INT), ("lp_iterations", INT), ("cuts", INT),
        ("relations_detected", INT), ("sep_time", REAL), ("detect_time", REAL), ("total_time", REAL),
        ("error", STR),
    ), ("instance", "variant")),
    "subsets": ((
        ("order", INT), ("subset", STR), ("variant", STR), ("instances", INT), ("solved", INT),
        ("sgm_time", REAL), ("sgm_nodes", REAL), ("time_ratio", REAL), ("nodes_ratio", REAL),
    ), ("order", "variant")),
    "rootbounds": ((
        ("comparison", STR), ("order", INT), ("bucket", STR), ("baseline_better", INT),
        ("variant_better", INT), ("degenerate", INT),
    ), ("comparison", "order")),
    "septime": ((
        ("variant", STR), ("instances", INT), ("mean_pct", REAL), ("max_pct", REAL),
        ("lt5", INT), ("pct5_20", INT), ("pct20_50", INT), ("pct50_100", INT), ("fails", INT),
    ), ("variant",)),
    "relations": ((
        ("relation", INT), ("i", STR), ("j", STR), ("w", STR), ("A", REAL), ("B", REAL),
        ("C", REAL), ("D", REAL), ("sense", STR), ("sources", STR),
    ), ("relation",)),
    "root": ((
        ("round", INT), ("dual_bound", REAL), ("cuts_added", INT), ("lp_iterations", INT),
    ), ("round",)),
}


@dataclass
class Report:
    kind: str
    rows: List[Dict[str, Any]] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def columns(self) -> Tuple[Tuple[str, str], ...]:
        return REPORT_KINDS[self.kind][0]

    def add(self, **values):
        self.rows.append(values)

    def sorted_rows(self) -> List[Dict[str, Any]]:
        keys = REPORT_KINDS[self.kind][1]
        return sorted(self.rows, key=lambda row: tuple((row.get(k) is None, row.get(k)) for k in keys))


def _check_report(report: Report):
    if report.kind not in REPORT_KINDS:
        raise RltError(f"unknown report kind '{report.kind}'")
    names = {name for name, _ in report.columns}
    for idx, row in enumerate(report.rows):
        extra = set(row) - names
        if extra:
            raise RltError(f"report '{report.kind}' row {idx} has unknown column(s) {sorted(extra)}")


def _csv_cell(value, typ) -> str:
    if value is None:
        return ""
    if typ == REAL:
        return format(float(value), ".17g")
    if typ == INT:
        return str(int(value))
    return str(value)


def _encode(value):
    """JSON-safe copy: non-finite floats become tagged objects."""
    if isinstance(value, float) and not math.isfinite(value):
        return {"$float": repr(value)}
    if isinstance(value, dict):
        return {str(k): _encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    return value


def _decode(value):
    if isinstance(value, dict):
        if set(value) == {"$float"}:
            return float(value["$float"])
        return {k: _decode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


def write_report(report: Report, fmt: str = "csv") -> str:
    """Serialize a report deterministically as CSV or JSON text."""
    _check_report(report)
    rows = report.sorted_rows()
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\r\n")
        writer.writerow([name for name, _ in report.columns])
        for row in rows:
            writer.writerow([_csv_cell(row.get(name), typ) for name, typ in report.columns])
        return buffer.getvalue()
    if fmt == "json":
        doc = {
            "kind": report.kind,
            "columns": [name for name, _ in report.columns],
            "metadata": _encode(report.metadata),
            "rows": [[_encode(_typed(row.get(name), typ)) for name, typ in report.columns] for row in rows],
        }
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"
    raise RltError(f"unknown report format '{fmt}' (expected csv or json)")


def _typed(value, typ):
    if value is None:
        return None
    if typ == REAL:
        return float(value)
    if typ == INT:
        return int(value)
    return str(value)


def read_report(text: str) -> Report:
    """Read back a JSON report written by write_report."""
    doc = json.loads(text)
    kind = doc["kind"]
    if kind not in REPORT_KINDS:
        raise RltError(f"unknown report kind '{kind}'")
    expected = [name for name, _ in REPORT_KINDS[kind][0]]
    if doc["columns"] != expected:
        raise RltError(f"column mismatch for report '{kind}'")
    rows = [
        {name: _decode(value) for name, value in zip(expected, values) if value is not None}
        for values in doc["rows"]
    ]
    return Report(kind, rows, _decode(doc.get("metadata", {})))


def write_report_file(report: Report, path: str, fmt: Optional[str] = None) -> str:
    """Write a report as CSV or JSON (chosen by extension) and return the path."""
    if fmt is None:
        fmt = "json" if path.endswith(".json") else "csv"
    text = write_report(report, fmt)
    # newline="" keeps CSV's \r\n intact
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    return path


def column_names(kind: str) -> Sequence[str]:
    """Column names of a report kind, in output order."""
    return [name for name, _ in REPORT_KINDS[kind][0]]
