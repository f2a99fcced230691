"""
Benchmark harness and command-line interface.

Runs every (instance, variant) pair through branch_and_bound, then builds
the comparison tables: subset statistics with shifted geometric means,
root-bound difference buckets and separation-time shares.

Usage:
    python src/rlt.py bench --instances instances --variants off,ierlt --serial
    python src/rlt.py detect instances/bigm_product.rlt.json
    python src/rlt.py root instances/worked_example.rlt.json --variant erlt
    python src/rlt.py solve instances/knapsack.rlt.json --variant off
    python src/rlt.py generate --out-dir instances/random --count 20 --seed 7
"""

import argparse
import glob
import logging
import math
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv

from cutloop import (VARIANTS, ConfigError, RltMode, Settings, SolveStatus, branch_and_bound,
                     make_clock, prepare_problem, solve_root)
from detect import detect_with_stats
from instance_gen import write_corpus
from instance_io import INSTANCE_SUFFIX, Report, read_instance_file, write_report_file
from model import RltError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILURES = 2

DEFAULT_BRACKETS = (0.0, 0.1, 1.0, 10.0)
ROOT_BUCKETS = (("0.01-0.2", 0.01, 0.2), ("0.2-0.5", 0.2, 0.5), ("0.5-1.0", 0.5, 1.0), (">1.0", 1.0, math.inf))
SEP_BUCKETS = (("lt5", 0.0, 5.0), ("pct5_20", 5.0, 20.0), ("pct20_50", 20.0, 50.0), ("pct50_100", 50.0, math.inf))
DIFF_CLAMP = 1e9
DIFF_GUARD = 1e-9


def ensure_exports_directory(exports_dir: str = "exports") -> str:
    """Create the report directory if needed."""
    if not os.path.exists(exports_dir):
        os.makedirs(exports_dir)
        print(f"Created exports directory: {exports_dir}")
    return exports_dir


def shifted_geomean(values: Sequence[float], shift: float) -> float:
    """exp(mean(ln(v + shift))) - shift."""
    if len(values) == 0:
        raise ValueError("shifted_geomean needs at least one value")
    if not shift > 0:
        raise ValueError(f"shift must be positive, got {shift}")
    arr = np.asarray(values, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("shifted_geomean values must be nonnegative")
    return float(np.exp(np.mean(np.log(arr + shift))) - shift)


def relative_bound_diff(g1: float, g2: float) -> Tuple[float, bool]:
    """(g2 - g1) / g1 plus a flag telling whether the denominator was guarded."""
    if abs(g1) > DIFF_GUARD:
        return (g2 - g1) / g1, False
    value = (g2 - g1) / max(abs(g1), DIFF_GUARD)
    return max(-DIFF_CLAMP, min(DIFF_CLAMP, value)), True


@dataclass
class BenchConfig:
    instances: List[str]
    variants: List[str]
    time_limit_s: float = 10.0
    node_limit: int = 1000
    out: str = os.path.join("exports", "bench.csv")
    shift_time: float = 1.0
    shift_nodes: float = 100.0
    seed: int = 0
    serial: bool = True
    clock: Optional[str] = None
    brackets: Tuple[float, ...] = DEFAULT_BRACKETS
    marking: Optional[bool] = None
    projection: Optional[bool] = None
    base: Settings = field(default_factory=Settings)

    def __post_init__(self):
        if not self.instances:
            raise ConfigError("benchmark needs at least one instance")
        if not self.variants:
            raise ConfigError("benchmark needs at least one variant")
        for name in self.variants:
            if name.strip().lower() not in VARIANTS:
                raise ConfigError(f"unknown variant '{name}' (expected one of {', '.join(VARIANTS)})")
        if self.clock is None:
            self.clock = "work" if self.serial else "wall"
        make_clock(self.clock)

    def settings_for(self, variant: str) -> Settings:
        settings = Settings.for_variant(variant, replace(self.base, time_limit_s=self.time_limit_s,
                                                         node_limit=self.node_limit))
        if settings.rlt_mode is not RltMode.OFF:
            if self.marking is not None:
                settings = replace(settings, use_marking=self.marking)
            if self.projection is not None:
                settings = replace(settings, use_projection=self.projection)
        return settings


@dataclass
class BenchReport:
    runs: Report
    subsets: Report
    rootbounds: Report
    septime: Report
    failures: int = 0

    def run_rows(self) -> Dict[Tuple[str, str], dict]:
        return {(row["instance"], row["variant"]): row for row in self.runs.rows}


def instance_stem(path: str) -> str:
    """Instance name: the file name without its suffix."""
    name = os.path.basename(path)
    if name.endswith(INSTANCE_SUFFIX):
        return name[: -len(INSTANCE_SUFFIX)]
    return os.path.splitext(name)[0]


def run_instance(path: str, variant: str, settings: Settings, clock_name: str) -> dict:
    """One benchmark run; failures become a row with status 'fail'."""
    row = {"instance": instance_stem(path), "variant": variant}
    try:
        problem = read_instance_file(path)
        report = branch_and_bound(problem, settings, make_clock(clock_name))
    except Exception as e:
        logger.warning("Run %s/%s failed: %s", row["instance"], variant, e)
        row.update(status="fail", error=f"{type(e).__name__}: {e}")
        return row
    row.update(
        status=report.status.value,
        primal=report.primal_bound,
        dual=report.dual_bound,
        root_bound=report.root_bound,
        nodes=report.nodes,
        lp_iterations=report.lp_iterations,
        cuts=report.cuts_added,
        relations_detected=report.relations_detected,
        sep_time=report.separation_time,
        detect_time=report.detect_time,
        total_time=report.wall_time,
        error="",
    )
    return row


def _is_solved(row: dict) -> bool:
    return row.get("status") == SolveStatus.OPTIMAL.value


def _subsets(instances: List[str], runs: Dict[Tuple[str, str], dict], pair: Tuple[str, str],
             brackets: Sequence[float]) -> List[Tuple[str, List[str]]]:
    base, other = pair
    usable = [name for name in instances if runs[(name, base)]["status"] != "fail"
              and runs[(name, other)]["status"] != "fail"]
    subsets = [("All", usable)]
    subsets.append(("Affected", [name for name in usable
                                 if runs[(name, base)]["lp_iterations"] != runs[(name, other)]["lp_iterations"]]))
    for x in brackets:
        members = [name for name in usable
                   if max(runs[(name, base)]["total_time"], runs[(name, other)]["total_time"]) >= x
                   and (_is_solved(runs[(name, base)]) or _is_solved(runs[(name, other)]))]
        subsets.append((f"[{x:g},timelim]", members))
    subsets.append(("All-optimal", [name for name in usable
                                    if _is_solved(runs[(name, base)]) and _is_solved(runs[(name, other)])]))
    return subsets


def _subset_table(config: BenchConfig, instances: List[str], runs) -> Report:
    table = Report("subsets")
    base = config.variants[0]
    pairs = [(base, v) for v in config.variants[1:]]
    for p, pair in enumerate(pairs):
        for s, (name, members) in enumerate(_subsets(instances, runs, pair, config.brackets)):
            order = p * 100 + s
            label = f"{name} ({pair[0]} vs {pair[1]})"
            sgm = {}
            for variant in pair:
                if members:
                    times = [runs[(m, variant)]["total_time"] for m in members]
                    nodes = [runs[(m, variant)]["nodes"] for m in members]
                    sgm[variant] = (shifted_geomean(times, config.shift_time),
                                    shifted_geomean(nodes, config.shift_nodes))
                else:
                    sgm[variant] = (None, None)
            for variant in pair:
                time_ratio = nodes_ratio = None
                if variant != base and members:
                    time_ratio = _ratio(sgm[variant][0], sgm[base][0])
                    nodes_ratio = _ratio(sgm[variant][1], sgm[base][1])
                table.add(order=order, subset=label, variant=variant, instances=len(members),
                          solved=sum(1 for m in members if _is_solved(runs[(m, variant)])),
                          sgm_time=sgm[variant][0], sgm_nodes=sgm[variant][1],
                          time_ratio=time_ratio, nodes_ratio=nodes_ratio)
    return table


def _ratio(value: float, base: float) -> Optional[float]:
    if base == 0:
        return 1.0 if value == 0 else None
    return value / base


def _rootbound_table(config: BenchConfig, instances: List[str], runs) -> Report:
    table = Report("rootbounds")
    base = config.variants[0]
    for variant in config.variants[1:]:
        comparison = f"{base} vs {variant}"
        counts = {label: [0, 0, 0] for label, _, _ in ROOT_BUCKETS}
        for name in instances:
            r1, r2 = runs[(name, base)], runs[(name, variant)]
            g1, g2 = r1.get("root_bound"), r2.get("root_bound")
            if g1 is None or g2 is None or not (math.isfinite(g1) and math.isfinite(g2)):
                continue
            diff, degenerate = relative_bound_diff(g1, g2)
            magnitude = abs(diff)
            for label, lo, hi in ROOT_BUCKETS:
                if lo <= magnitude < hi:
                    # minimization: a larger root bound is better
                    counts[label][1 if g2 > g1 else 0] += 1
                    counts[label][2] += int(degenerate)
                    break
        for order, (label, _, _) in enumerate(ROOT_BUCKETS):
            baseline_better, variant_better, degenerate = counts[label]
            table.add(comparison=comparison, order=order, bucket=label, baseline_better=baseline_better,
                      variant_better=variant_better, degenerate=degenerate)
    return table


def _septime_table(config: BenchConfig, instances: List[str], runs) -> Report:
    table = Report("septime")
    for variant in config.variants:
        rows = [runs[(name, variant)] for name in instances]
        ok = [row for row in rows if row["status"] != "fail"]
        fails = len(rows) - len(ok)
        pcts = [100.0 * row["sep_time"] / row["total_time"] if row["total_time"] > 0 else 0.0 for row in ok]
        counts = {label: sum(1 for pct in pcts if lo <= pct < hi) for label, lo, hi in SEP_BUCKETS}
        table.add(variant=variant, instances=len(ok),
                  mean_pct=float(np.mean(pcts)) if pcts else None,
                  max_pct=float(np.max(pcts)) if pcts else None,
                  fails=fails, **counts)
    return table


def job_order(n_jobs: int, seed: int) -> List[int]:
    """Seeded execution order of the benchmark jobs; reports keep the sorted order."""
    return [int(k) for k in np.random.default_rng(seed).permutation(n_jobs)]


def run_benchmark(config: BenchConfig) -> BenchReport:
    """Solve every (instance, variant) and build the comparison tables."""
    paths = sorted(config.instances, key=instance_stem)
    jobs = [(path, variant, config.settings_for(variant), config.clock)
            for path in paths for variant in config.variants]
    print(f"📋 {len(paths)} instance(s) x {len(config.variants)} variant(s), clock: {config.clock}")

    order = job_order(len(jobs), config.seed)
    results: List[dict] = [{} for _ in jobs]
    if config.serial:
        for k in order:
            results[k] = run_instance(*jobs[k])
    else:
        with ProcessPoolExecutor() as pool:
            futures = {k: pool.submit(run_instance, *jobs[k]) for k in order}
            for k, future in futures.items():
                results[k] = future.result()

    runs = Report("runs", metadata={"variants": list(config.variants), "seed": config.seed, "clock": config.clock})
    for row in results:
        runs.add(**row)
        mark = "❌" if row["status"] == "fail" else "✅"
        print(f"  {mark} {row['instance']} [{row['variant']}]: {row['status']}")
    by_key = {(row["instance"], row["variant"]): row for row in results}
    instances = sorted({row["instance"] for row in results})
    failures = sum(1 for row in results if row["status"] == "fail")

    return BenchReport(
        runs=runs,
        subsets=_subset_table(config, instances, by_key) if len(config.variants) >= 2 else Report("subsets"),
        rootbounds=_rootbound_table(config, instances, by_key) if len(config.variants) >= 2 else Report("rootbounds"),
        septime=_septime_table(config, instances, by_key),
        failures=failures,
    )


def git_describe() -> str:
    """Short git revision of the working tree, or "unknown"."""
    try:
        result = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                                timeout=5)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return result.stdout.strip() if result.returncode == 0 and result.stdout.strip() else "unknown"


def write_bench_reports(report: BenchReport, config: BenchConfig) -> List[str]:
    """CSV per table plus a JSON copy of the runs with metadata."""
    out_dir = os.path.dirname(config.out) or "."
    ensure_exports_directory(out_dir)
    stem = os.path.splitext(config.out)[0]
    written = [write_report_file(report.runs, stem + ".csv", "csv")]
    for suffix, table in (("_subsets", report.subsets), ("_rootbounds", report.rootbounds),
                          ("_septime", report.septime)):
        written.append(write_report_file(table, stem + suffix + ".csv", "csv"))
    runs = Report("runs", report.runs.rows, dict(report.runs.metadata))
    runs.metadata.update(
        timestamp=datetime.now().isoformat(timespec="seconds"),
        git=git_describe(),
        settings={variant: config.settings_for(variant).as_dict() for variant in config.variants},
    )
    written.append(write_report_file(runs, stem + ".json", "json"))
    return written


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _on_off(value: Optional[str]) -> Optional[bool]:
    if value is None:
        return None
    return value == "on"


def _collect_instances(sources: Sequence[str]) -> List[str]:
    paths = []
    for source in sources:
        if os.path.isdir(source):
            paths.extend(glob.glob(os.path.join(source, "*" + INSTANCE_SUFFIX)))
        elif os.path.exists(source):
            paths.append(source)
        else:
            raise ConfigError(f"instance path not found: {source}")
    return sorted(set(paths))


def cmd_bench(args) -> int:
    """Run the benchmark and write its tables."""
    print("📊 RLT Benchmark")
    print("=" * 60)
    config = BenchConfig(
        instances=_collect_instances(args.instances),
        variants=[v.strip().lower() for v in args.variants.split(",") if v.strip()],
        time_limit_s=args.time_limit,
        node_limit=args.node_limit,
        out=args.out,
        seed=args.seed,
        serial=args.serial,
        clock=args.clock,
        marking=_on_off(args.marking),
        projection=_on_off(args.projection),
        base=Settings.from_env(),
    )
    report = run_benchmark(config)
    written = write_bench_reports(report, config)

    print("\n" + "=" * 60)
    print("📊 BENCHMARK SUMMARY")
    print("=" * 60)
    print(f"✅ Runs completed: {len(report.runs.rows) - report.failures}")
    print(f"❌ Failed runs: {report.failures}")
    for row in report.subsets.sorted_rows():
        if row["subset"].startswith("All (") and row.get("time_ratio") is not None:
            print(f"  • {row['subset']}: time ratio {row['time_ratio']:.3f}, nodes ratio {row['nodes_ratio']:.3f}")
    for path in written:
        print(f"📁 {path}")
    return EXIT_FAILURES if report.failures else EXIT_OK


def cmd_detect(args) -> int:
    """List the implicit products found in one instance."""
    problem = read_instance_file(args.file)
    result = detect_with_stats(problem)
    print(f"🔍 {problem.name}: {result.candidates} candidate(s), {result.groups} group(s), "
          f"{result.pairs_tried} pair(s) tried")
    names = [v.name for v in problem.variables]
    table = Report("relations")
    for rel in result.relations:
        print(f"  • r{rel.id}: {rel.A:.10g}*{names[rel.i]} + {rel.B:.10g}*{names[rel.w]} + "
              f"{rel.C:.10g}*{names[rel.j]} + {rel.D:.10g} {rel.sense.value} {names[rel.i]}*{names[rel.j]}"
              f"   [{', '.join(rel.sources)}]")
        table.add(relation=rel.id, i=names[rel.i], j=names[rel.j], w=names[rel.w], A=rel.A, B=rel.B, C=rel.C,
                  D=rel.D, sense=rel.sense.value, sources=";".join(rel.sources))
    if not result.relations:
        print("  ⚠️  No implicit product relations found")
    if args.out:
        print(f"📁 {write_report_file(table, args.out)}")
    return EXIT_OK


def cmd_root(args) -> int:
    """Root cut loop on one instance, with the per-round trajectory."""
    settings = Settings.for_variant(args.variant, Settings.from_env())
    clock = make_clock(args.clock)
    problem, detected, _ = prepare_problem(read_instance_file(args.file), settings, clock)
    report = solve_root(problem, settings, clock)
    print(f"🌱 Root of {problem.name} [{args.variant}], {detected} detected relation(s)")
    print("=" * 60)
    table = Report("root")
    for (round_index, bound), cuts in zip(report.bound_trajectory, report.cuts_added):
        print(f"  round {round_index:>2}: bound {bound:.10g}  (+{cuts} cut(s))")
        table.add(round=round_index, dual_bound=bound, cuts_added=cuts)
    print(f"📊 Dual bound {report.dual_bound:.10g}, {report.total_cuts} cut(s), "
          f"{report.lp_iterations} LP iteration(s)")
    if args.show_cuts:
        for cut in report.cuts:
            print(f"  • {cut.expr!r} <= {cut.rhs:.10g}  (violation {cut.violation_at:.3g})")
    if args.out:
        print(f"📁 {write_report_file(table, args.out)}")
    return EXIT_OK


def cmd_solve(args) -> int:
    """Branch and bound on one instance."""
    settings = Settings.for_variant(args.variant, Settings.from_env())
    if args.time_limit is not None:
        settings = replace(settings, time_limit_s=args.time_limit)
    if args.node_limit is not None:
        settings = replace(settings, node_limit=args.node_limit)
    problem = read_instance_file(args.file)
    report = branch_and_bound(problem, settings, make_clock(args.clock))
    print(f"🌳 {problem.name} [{args.variant}]")
    print("=" * 60)
    print(f"  Status: {'✅' if report.solved else '⚠️ '} {report.status.value}")
    print(f"  Primal bound: {report.primal_bound:.10g}")
    print(f"  Dual bound: {report.dual_bound:.10g}")
    print(f"  Root bound: {report.root_bound:.10g}")
    print(f"  Nodes: {report.nodes}, LP iterations: {report.lp_iterations}, cuts: {report.cuts_added}")
    print(f"  Relations detected: {report.relations_detected}")
    print(f"  Time: {report.wall_time:.4f}s (separation {report.separation_time:.4f}s)")
    return EXIT_OK


def cmd_generate(args) -> int:
    """Write a generated corpus to disk."""
    paths = write_corpus(args.out_dir, args.count, args.seed)
    print(f"✅ Wrote {len(paths)} instance(s) to {args.out_dir}")
    return EXIT_OK


class _ArgumentParser(argparse.ArgumentParser):
    """Reports bad arguments as ConfigError instead of exiting with argparse's code."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser for the rlt command and its subcommands."""
    parser = _ArgumentParser(prog="rlt", description="RLT cut separation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="run the variant matrix over a set of instances")
    bench.add_argument("--instances", nargs="+", default=["instances"], help="instance files or directories")
    bench.add_argument("--variants", default="off,erlt,ierlt", help=f"comma list of {', '.join(VARIANTS)}")
    bench.add_argument("--marking", choices=("on", "off"))
    bench.add_argument("--projection", choices=("on", "off"))
    bench.add_argument("--time-limit", type=float, default=10.0)
    bench.add_argument("--node-limit", type=int, default=1000)
    bench.add_argument("--out", default=os.path.join("exports", "bench.csv"))
    bench.add_argument("--seed", type=int, default=0, help="seeds the order the runs execute in")
    bench.add_argument("--serial", action="store_true", help="run in-process with the deterministic work clock")
    bench.add_argument("--clock", choices=("wall", "work"))
    bench.set_defaults(func=cmd_bench)

    detect = sub.add_parser("detect", help="print implicit product relations of an instance")
    detect.add_argument("file")
    detect.add_argument("--out", help="write the relations report (csv or json)")
    detect.set_defaults(func=cmd_detect)

    root = sub.add_parser("root", help="run the root cutting-plane loop")
    root.add_argument("file")
    root.add_argument("--variant", default="erlt")
    root.add_argument("--clock", choices=("wall", "work"), default="wall")
    root.add_argument("--show-cuts", action="store_true")
    root.add_argument("--out", help="write the round trajectory (csv or json)")
    root.set_defaults(func=cmd_root)

    solve = sub.add_parser("solve", help="branch-and-bound with the variant's settings")
    solve.add_argument("file")
    solve.add_argument("--variant", default="erlt")
    solve.add_argument("--clock", choices=("wall", "work"), default="wall")
    solve.add_argument("--time-limit", type=float)
    solve.add_argument("--node-limit", type=int)
    solve.set_defaults(func=cmd_solve)

    generate = sub.add_parser("generate", help="write a random instance corpus")
    generate.add_argument("--out-dir", default=os.path.join("instances", "random"))
    generate.add_argument("--count", type=int, default=20)
    generate.add_argument("--seed", type=int, default=0)
    generate.set_defaults(func=cmd_generate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Command line entry point; returns the process exit code."""
    load_dotenv()
    level = os.getenv("RLT_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}")
        return EXIT_CONFIG
    except (RltError, OSError) as e:
        print(f"❌ {type(e).__name__}: {e}")
        return EXIT_FAILURES


if __name__ == "__main__":
    sys.exit(main())
