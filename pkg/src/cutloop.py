"""
Root cutting-plane loop and a small best-bound branch-and-bound.

Settings come from code defaults, optionally overridden by RLT_* variables
in the environment or a .env file.
"""

import heapq
import logging
import math
import os
import time
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

from dotenv import load_dotenv

from detect import detect_with_stats
from model import Problem, RltError
from separate import Cut, Mode, SeparationContext, SeparationStats, separate_rlt
from simplex import LpInstance, LpRow, LpSolution, LpStatus, lp_from_problem, solve_lp

logger = logging.getLogger(__name__)

INTEGRALITY_TOL = 1e-6
RELATION_TOL = 1e-6
WORK_UNIT_SECONDS = 1e-4


class ConfigError(RltError):
    """Raised for invalid settings or malformed configuration values."""


class LpStatusError(RltError):
    """The relaxation LP ended in a non-optimal status."""

    def __init__(self, status: LpStatus, round_index: int):
        self.status = status
        self.round_index = round_index
        super().__init__(f"LP {status.value} in round {round_index}")


class RltMode(str, Enum):
    OFF = "off"
    ERLT = "erlt"
    IERLT = "ierlt"


VARIANTS = ("off", "erlt", "ierlt", "marking-on", "marking-off", "projection-on", "projection-off")


@dataclass(frozen=True)
class Settings:
    max_unknown_terms: int = 20
    root_rounds: int = 10
    node_rounds: int = 1
    sep_frequency_nodes: int = 10
    detect_implicit: bool = False
    use_marking: bool = True
    use_projection: bool = True
    rlt_mode: RltMode = RltMode.ERLT
    time_limit_s: float = 60.0
    max_cuts_per_round: int = 100
    node_limit: int = 10000

    def __post_init__(self):
        try:
            object.__setattr__(self, "rlt_mode", RltMode(self.rlt_mode))
        except ValueError:
            raise ConfigError(f"unknown rlt_mode {self.rlt_mode!r}")
        for name in ("max_unknown_terms", "root_rounds", "node_rounds", "sep_frequency_nodes",
                     "max_cuts_per_round", "node_limit"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.time_limit_s >= 0:
            raise ConfigError(f"time_limit_s must be >= 0, got {self.time_limit_s}")
        if self.rlt_mode is RltMode.IERLT and not self.detect_implicit:
            raise ConfigError("rlt_mode ierlt requires detect_implicit")

    @property
    def separation_mode(self) -> Mode:
        return Mode.MARKING if self.use_marking else Mode.BASELINE

    @classmethod
    def from_env(cls, base: Optional["Settings"] = None) -> "Settings":
        """Defaults overridden by RLT_* environment variables (.env honoured)."""
        load_dotenv()
        base = base or cls()
        overrides = {}
        for env_name, attr, cast in (
            ("RLT_MAX_UNKNOWN_TERMS", "max_unknown_terms", int),
            ("RLT_ROOT_ROUNDS", "root_rounds", int),
            ("RLT_NODE_ROUNDS", "node_rounds", int),
            ("RLT_SEP_FREQUENCY", "sep_frequency_nodes", int),
            ("RLT_MAX_CUTS", "max_cuts_per_round", int),
            ("RLT_TIME_LIMIT", "time_limit_s", float),
            ("RLT_NODE_LIMIT", "node_limit", int),
        ):
            raw = os.getenv(env_name)
            if raw is None or raw.strip() == "":
                continue
            try:
                overrides[attr] = cast(raw.strip())
            except ValueError:
                raise ConfigError(f"{env_name}={raw!r} is not a valid {cast.__name__}")
        return replace(base, **overrides)

    @classmethod
    def for_variant(cls, name: str, base: Optional["Settings"] = None) -> "Settings":
        base = base or cls()
        key = name.strip().lower()
        if key == "off":
            return replace(base, rlt_mode=RltMode.OFF, detect_implicit=False)
        if key == "erlt":
            return replace(base, rlt_mode=RltMode.ERLT, detect_implicit=False)
        if key == "ierlt":
            return replace(base, rlt_mode=RltMode.IERLT, detect_implicit=True)
        ierlt = replace(base, rlt_mode=RltMode.IERLT, detect_implicit=True)
        if key == "marking-on":
            return replace(ierlt, use_marking=True, use_projection=False)
        if key == "marking-off":
            return replace(ierlt, use_marking=False, use_projection=False)
        if key == "projection-on":
            return replace(ierlt, use_marking=True, use_projection=True)
        if key == "projection-off":
            return replace(ierlt, use_marking=True, use_projection=False)
        raise ConfigError(f"unknown variant '{name}' (expected one of {', '.join(VARIANTS)})")

    def as_dict(self) -> dict:
        return {f.name: (getattr(self, f.name).value if isinstance(getattr(self, f.name), Enum)
                         else getattr(self, f.name)) for f in fields(self)}


class WallClock:
    """Monotonic wall time in seconds."""

    name = "wall"

    def __init__(self):
        self._start = time.perf_counter()

    def now(self) -> float:
        return time.perf_counter() - self._start

    def charge(self, units: int):
        pass


class WorkClock:
    """Deterministic clock advanced by charged work units (pivots, candidates, pairs)."""

    name = "work"

    def __init__(self, unit_seconds: float = WORK_UNIT_SECONDS):
        self.units = 0
        self.unit_seconds = unit_seconds

    def now(self) -> float:
        return self.units * self.unit_seconds

    def charge(self, units: int):
        self.units += int(units)


def make_clock(name: str):
    """Clock by name: "wall" or "work"."""
    if name == "wall":
        return WallClock()
    if name == "work":
        return WorkClock()
    raise ConfigError(f"unknown clock '{name}' (expected wall or work)")


def select_cuts(cuts: Sequence[Cut], max_cuts: int) -> List[Cut]:
    """Most efficacious cuts first; ties broken by provenance."""
    ranked = sorted(cuts, key=lambda c: (-c.efficacy(), c.identity))
    return ranked[:max_cuts]


@dataclass
class RootReport:
    bound_trajectory: List[Tuple[int, float]] = field(default_factory=list)
    cuts_added: List[int] = field(default_factory=list)
    dual_bound: float = -math.inf
    lp_iterations: int = 0
    separation_time: float = 0.0
    stats: SeparationStats = field(default_factory=SeparationStats)
    lp: Optional[LpInstance] = None
    solution: Optional[LpSolution] = None
    cut_rows: List[LpRow] = field(default_factory=list)
    cuts: List[Cut] = field(default_factory=list)

    @property
    def total_cuts(self) -> int:
        return sum(self.cuts_added)


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    TIME_LIMIT = "time_limit"
    NODE_LIMIT = "node_limit"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    INCOMPLETE = "incomplete"


@dataclass
class SolveReport:
    status: SolveStatus
    primal_bound: float = math.inf
    dual_bound: float = -math.inf
    nodes: int = 0
    lp_iterations: int = 0
    separation_time: float = 0.0
    wall_time: float = 0.0
    root_bound: float = -math.inf
    cuts_added: int = 0
    relations_detected: int = 0
    detect_time: float = 0.0
    incumbent: Optional[List[float]] = None

    @property
    def solved(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


def prepare_problem(problem: Problem, settings: Settings, clock=None) -> Tuple[Problem, int, float]:
    """Append detected implicit relations when the settings ask for them."""
    if not settings.detect_implicit:
        return problem, 0, 0.0
    clock = clock or WallClock()
    started = clock.now()
    result = detect_with_stats(problem)
    clock.charge(result.pairs_tried + result.candidates)
    prepared = problem.with_relations(result.relations) if result.relations else problem
    return prepared, len(result.relations), clock.now() - started


def _solve(lp: LpInstance, clock, warm=None, added_rows=None) -> LpSolution:
    solution = solve_lp(lp, warm=warm, added_rows=added_rows)
    clock.charge(solution.iterations)
    return solution


def _separation_round(solution: LpSolution, ctx: SeparationContext, settings: Settings, clock,
                      stats: SeparationStats) -> Tuple[List[Cut], float]:
    started = clock.now()
    result = separate_rlt(solution, settings.separation_mode, settings.use_projection, ctx)
    clock.charge(result.stats.candidates_examined)
    stats.merge(result.stats)
    return select_cuts(result.cuts, settings.max_cuts_per_round), clock.now() - started


def solve_root(problem: Problem, settings: Settings, clock=None) -> RootReport:
    """Root LP with McCormick rows, then up to root_rounds RLT separation rounds."""
    clock = clock or WallClock()
    report = RootReport()
    lp = lp_from_problem(problem, include_mccormick=True)
    solution = _solve(lp, clock)
    report.lp_iterations += solution.iterations
    if not solution.is_optimal:
        raise LpStatusError(solution.status, 0)
    report.dual_bound = solution.objective
    report.bound_trajectory.append((0, report.dual_bound))
    report.cuts_added.append(0)
    logger.info("Root round 0: bound %.10g", report.dual_bound)

    active = settings.rlt_mode is not RltMode.OFF and problem.relations
    if active:
        ctx = SeparationContext(problem, max_unknown_terms=settings.max_unknown_terms)
        for round_index in range(1, settings.root_rounds + 1):
            if clock.now() >= settings.time_limit_s:
                break
            cuts, spent = _separation_round(solution, ctx, settings, clock, report.stats)
            report.separation_time += spent
            if not cuts:
                break
            rows = [cut.to_lp_row() for cut in cuts]
            solution = _solve(lp, clock, warm=solution.basis, added_rows=rows)
            lp = lp.with_rows(rows)
            report.lp_iterations += solution.iterations
            if not solution.is_optimal:
                raise LpStatusError(solution.status, round_index)
            report.cut_rows.extend(rows)
            report.cuts.extend(cuts)
            report.dual_bound = max(report.dual_bound, solution.objective)
            report.bound_trajectory.append((round_index, report.dual_bound))
            report.cuts_added.append(len(cuts))
            logger.info("Root round %d: %d cut(s), bound %.10g", round_index, len(cuts), report.dual_bound)

    report.lp = lp
    report.solution = solution
    return report


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    lb: Tuple[float, ...] = field(compare=False)
    ub: Tuple[float, ...] = field(compare=False)
    basis: object = field(compare=False, default=None)
    depth: int = field(compare=False, default=0)


def _most_fractional(problem: Problem, x) -> Optional[int]:
    best, best_frac = None, INTEGRALITY_TOL
    for var in problem.binary_ids:
        frac = min(x[var] - math.floor(x[var]), math.ceil(x[var]) - x[var])
        if frac > best_frac:
            best, best_frac = var, frac
    return best


def _node_lp(problem: Problem, lb, ub, cut_rows: List[LpRow]) -> LpInstance:
    return lp_from_problem(problem, include_mccormick=True, lb=lb, ub=ub).with_rows(cut_rows)


def branch_and_bound(problem: Problem, settings: Settings, clock=None) -> SolveReport:
    """Best-bound branch-and-bound on binaries with RLT cuts at the root and every
    sep_frequency_nodes-th node."""
    clock = clock or WallClock()
    started = clock.now()
    prepared, n_detected, detect_time = prepare_problem(problem, settings, clock)
    report = SolveReport(SolveStatus.OPTIMAL, relations_detected=n_detected, detect_time=detect_time)

    def finish(status: SolveStatus) -> SolveReport:
        report.status = status
        report.wall_time = clock.now() - started
        logger.info("Solve finished: %s, primal %s, dual %s, %d node(s)", status.value,
                    report.primal_bound, report.dual_bound, report.nodes)
        return report

    try:
        root = solve_root(prepared, settings, clock)
    except LpStatusError as e:
        report.nodes = 1
        if e.status is LpStatus.INFEASIBLE:
            report.dual_bound = math.inf
            return finish(SolveStatus.INFEASIBLE)
        if e.status is LpStatus.UNBOUNDED:
            return finish(SolveStatus.UNBOUNDED)
        return finish(SolveStatus.INCOMPLETE)

    report.root_bound = root.dual_bound
    report.lp_iterations = root.lp_iterations
    report.separation_time = root.separation_time
    report.cuts_added = root.total_cuts
    report.nodes = 1

    cut_rows: List[LpRow] = list(root.cut_rows)
    ctx = None
    if settings.rlt_mode is not RltMode.OFF and prepared.relations:
        ctx = SeparationContext(prepared, max_unknown_terms=settings.max_unknown_terms)
    stats = SeparationStats()
    incumbent = math.inf
    incumbent_x = None
    unresolved = math.inf
    lb0, ub0 = prepared.bounds()

    heap: List[_Node] = []
    seq = 0
    nonroot = 0
    pending: Optional[Tuple[_Node, LpSolution]] = (_Node(root.dual_bound, seq, tuple(lb0), tuple(ub0)), root.solution)

    def tolerance(value: float) -> float:
        return 1e-9 * max(1.0, abs(value))

    while pending is not None or heap:
        if pending is not None:
            node, solution = pending
            pending = None
        else:
            node = heapq.heappop(heap)
            if node.bound >= incumbent - tolerance(incumbent):
                continue
            if clock.now() - started >= settings.time_limit_s:
                heapq.heappush(heap, node)
                report.dual_bound = min([n.bound for n in heap] + [incumbent, unresolved])
                return finish(SolveStatus.TIME_LIMIT)
            if nonroot >= settings.node_limit:
                heapq.heappush(heap, node)
                report.dual_bound = min([n.bound for n in heap] + [incumbent, unresolved])
                return finish(SolveStatus.NODE_LIMIT)
            nonroot += 1
            report.nodes += 1
            lp = _node_lp(prepared, node.lb, node.ub, cut_rows)
            solution = _solve(lp, clock, warm=node.basis)
            report.lp_iterations += solution.iterations
            if solution.status is LpStatus.UNBOUNDED:
                report.dual_bound = -math.inf
                return finish(SolveStatus.UNBOUNDED)
            if not solution.is_optimal:
                continue

            if ctx is not None and settings.sep_frequency_nodes > 0 and nonroot % settings.sep_frequency_nodes == 0:
                for _ in range(settings.node_rounds):
                    cuts, spent = _separation_round(solution, ctx, settings, clock, stats)
                    report.separation_time += spent
                    if not cuts:
                        break
                    rows = [cut.to_lp_row() for cut in cuts]
                    solution = _solve(lp, clock, warm=solution.basis, added_rows=rows)
                    lp = lp.with_rows(rows)
                    cut_rows.extend(rows)
                    report.cuts_added += len(rows)
                    report.lp_iterations += solution.iterations
                    if not solution.is_optimal:
                        break
                if not solution.is_optimal:
                    continue

        bound = max(node.bound, solution.objective)
        if bound >= incumbent - tolerance(incumbent):
            continue
        x = solution.x_star

        branch_var = _most_fractional(prepared, x)
        if branch_var is None:
            violated = [rel for rel in prepared.relations if rel.violation(x) > RELATION_TOL]
            if not violated:
                incumbent, incumbent_x = solution.objective, [float(v) for v in x]
                report.primal_bound, report.incumbent = incumbent, incumbent_x
                logger.info("New incumbent %.10g at node %d", incumbent, report.nodes)
                continue
            for rel in violated:
                for var in sorted({rel.i, rel.j}):
                    if prepared.variables[var].is_binary and node.lb[var] < node.ub[var]:
                        branch_var = var if branch_var is None else min(branch_var, var)
            if branch_var is None:
                logger.warning("Integral node violates %d relation(s) with nothing left to branch on", len(violated))
                unresolved = min(unresolved, bound)
                continue

        for value in (0.0, 1.0):
            lb, ub = list(node.lb), list(node.ub)
            lb[branch_var] = ub[branch_var] = value
            seq += 1
            heapq.heappush(heap, _Node(bound, seq, tuple(lb), tuple(ub), solution.basis, node.depth + 1))

    if unresolved < incumbent:
        report.dual_bound = unresolved
        return finish(SolveStatus.INCOMPLETE)
    if math.isinf(incumbent):
        report.dual_bound = math.inf
        return finish(SolveStatus.INFEASIBLE)
    report.dual_bound = incumbent
    return finish(SolveStatus.OPTIMAL)
