#!/usr/bin/env python3
"""
Tests for the benchmark statistics, the harness and the command line.
"""

import math
import os
import sys
from pathlib import Path

import pytest

from bench_cli import (
    EXIT_CONFIG,
    EXIT_FAILURES,
    EXIT_OK,
    BenchConfig,
    ensure_exports_directory,
    job_order,
    main,
    relative_bound_diff,
    run_benchmark,
    shifted_geomean,
    write_bench_reports,
)
from cutloop import ConfigError
from instance_io import read_report

INSTANCES_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "instances")
BIGM = os.path.join(INSTANCES_DIR, "bigm_product.rlt.json")
KNAPSACK = os.path.join(INSTANCES_DIR, "knapsack.rlt.json")
WORKED = os.path.join(INSTANCES_DIR, "worked_example.rlt.json")


@pytest.fixture
def broken_instance(tmp_path):
    path = tmp_path / "broken.rlt.json"
    path.write_text('{"version": 1, "variables": [', encoding="utf-8")
    return str(path)


def test_shifted_geomean_formula():
    assert shifted_geomean([1.0, 9.0], 1.0) == pytest.approx(math.sqrt(20.0) - 1.0, abs=1e-12)


def test_shifted_geomean_constant_and_permutation():
    assert shifted_geomean([3.5] * 5, 2.0) == pytest.approx(3.5, abs=1e-12)
    values = [0.0, 4.0, 120.0, 7.5]
    assert shifted_geomean(values, 100.0) == pytest.approx(shifted_geomean(values[::-1], 100.0), abs=1e-12)


def test_shifted_geomean_rejects_bad_input():
    with pytest.raises(ValueError):
        shifted_geomean([1.0, -0.5], 1.0)
    with pytest.raises(ValueError):
        shifted_geomean([], 1.0)
    with pytest.raises(ValueError):
        shifted_geomean([1.0], 0.0)


def test_relative_bound_diff():
    assert relative_bound_diff(-1.0, -0.5) == (-0.5, False)
    assert relative_bound_diff(2.0, 2.0) == (0.0, False)
    value, degenerate = relative_bound_diff(0.0, 1.0)
    assert degenerate and value == pytest.approx(1e9)
    value, degenerate = relative_bound_diff(0.0, -1.0)
    assert degenerate and value == pytest.approx(-1e9)


def test_bench_config_validation():
    with pytest.raises(ConfigError):
        BenchConfig(instances=[], variants=["off"])
    with pytest.raises(ConfigError, match="unknown variant"):
        BenchConfig(instances=[BIGM], variants=["off", "fast"])
    assert BenchConfig(instances=[BIGM], variants=["off"]).clock == "work"
    assert BenchConfig(instances=[BIGM], variants=["off"], serial=False).clock == "wall"


def test_marking_override_leaves_off_alone():
    config = BenchConfig(instances=[BIGM], variants=["off", "ierlt"], marking=False, time_limit_s=3.0)
    assert config.settings_for("ierlt").use_marking is False
    assert config.settings_for("ierlt").time_limit_s == 3.0
    assert config.settings_for("off").use_marking is True


def test_two_instance_benchmark_tables(tmp_path):
    config = BenchConfig(instances=[KNAPSACK, BIGM], variants=["off", "ierlt"], out=str(tmp_path / "bench.csv"))
    report = run_benchmark(config)
    assert report.failures == 0
    runs = report.run_rows()
    assert sorted(runs) == [("bigm_product", "ierlt"), ("bigm_product", "off"),
                            ("knapsack", "ierlt"), ("knapsack", "off")]
    assert all(row["status"] == "optimal" for row in runs.values())

    all_rows = [row for row in report.subsets.rows if row["subset"] == "All (off vs ierlt)"]
    assert [row["variant"] for row in all_rows] == ["off", "ierlt"]
    assert all(row["instances"] == 2 and row["solved"] == 2 for row in all_rows)
    assert all_rows[0]["time_ratio"] is None
    assert all_rows[1]["time_ratio"] == pytest.approx(all_rows[1]["sgm_time"] / all_rows[0]["sgm_time"])
    subsets = {row["subset"].split(" (")[0] for row in report.subsets.rows}
    assert subsets == {"All", "Affected", "[0,timelim]", "[0.1,timelim]", "[1,timelim]", "[10,timelim]",
                       "All-optimal"}

    assert [row["bucket"] for row in report.rootbounds.rows] == ["0.01-0.2", "0.2-0.5", "0.5-1.0", ">1.0"]
    assert [row["variant"] for row in report.septime.rows] == ["off", "ierlt"]


def test_serial_benchmark_csv_is_reproducible(tmp_path):
    texts = []
    for name in ("first", "second"):
        config = BenchConfig(instances=[BIGM, KNAPSACK], variants=["off", "erlt", "ierlt"],
                             out=str(tmp_path / name / "bench.csv"))
        paths = write_bench_reports(run_benchmark(config), config)
        texts.append([Path(p).read_bytes() for p in paths if p.endswith(".csv")])
    assert texts[0] == texts[1]


def test_failed_run_is_recorded(tmp_path, broken_instance):
    config = BenchConfig(instances=[broken_instance, BIGM], variants=["off", "ierlt"], out=str(tmp_path / "b.csv"))
    report = run_benchmark(config)
    assert report.failures == 2
    failed = report.run_rows()[("broken", "off")]
    assert failed["status"] == "fail"
    assert "InstanceFormatError" in failed["error"]
    written = write_bench_reports(report, config)
    with open(written[-1], encoding="utf-8") as f:
        back = read_report(f.read())
    assert back.metadata["variants"] == ["off", "ierlt"]
    assert "timestamp" in back.metadata


def test_ensure_exports_directory(tmp_path):
    target = str(tmp_path / "exports")
    assert ensure_exports_directory(target) == target
    assert os.path.isdir(target)
    assert ensure_exports_directory(target) == target


def test_cli_exit_codes(tmp_path, broken_instance):
    out = str(tmp_path / "cli" / "bench.csv")
    assert main(["bench", "--instances", BIGM, "--variants", "off,ierlt", "--serial", "--out", out]) == EXIT_OK
    assert os.path.exists(out)
    assert main(["bench", "--instances", str(tmp_path / "missing"), "--out", out]) == EXIT_CONFIG
    assert main(["bench", "--instances", BIGM, "--variants", "off,warp", "--out", out]) == EXIT_CONFIG
    assert main(["bench", "--instances", broken_instance, BIGM, "--variants", "off", "--serial",
                 "--out", out]) == EXIT_FAILURES
    assert main(["detect", broken_instance]) == EXIT_FAILURES


def test_cli_bad_option_values_are_config_errors(tmp_path, capsys):
    out = str(tmp_path / "bench.csv")
    assert main(["bench", "--instances", BIGM, "--marking", "maybe", "--out", out]) == EXIT_CONFIG
    assert main(["bench", "--instances", BIGM, "--time-limit", "abc", "--out", out]) == EXIT_CONFIG
    assert main(["root", WORKED, "--clock", "x"]) == EXIT_CONFIG
    assert main(["warp"]) == EXIT_CONFIG
    assert main([]) == EXIT_CONFIG
    assert "Configuration error" in capsys.readouterr().out
    assert not os.path.exists(out)


def test_job_order_is_a_seeded_permutation():
    assert sorted(job_order(12, 3)) == list(range(12))
    assert job_order(12, 3) == job_order(12, 3)
    assert len({tuple(job_order(12, seed)) for seed in range(10)}) > 1


def test_seed_changes_execution_order_not_results(tmp_path):
    rows = []
    for seed in (0, 9):
        config = BenchConfig(instances=[BIGM, KNAPSACK, WORKED], variants=["off", "ierlt"], seed=seed,
                             out=str(tmp_path / f"s{seed}" / "bench.csv"))
        report = run_benchmark(config)
        assert report.runs.metadata["seed"] == seed
        rows.append(report.runs.rows)
    assert rows[0] == rows[1]


def test_cli_detect_and_root(tmp_path, capsys):
    relations = str(tmp_path / "relations.csv")
    assert main(["detect", BIGM, "--out", relations]) == EXIT_OK
    assert "bigm_product" in capsys.readouterr().out
    with open(relations, encoding="utf-8", newline="") as f:
        assert f.readline().startswith("relation,i,j,w,A,B,C,D,sense,sources")

    trajectory = str(tmp_path / "root.json")
    assert main(["root", WORKED, "--variant", "erlt", "--clock", "work", "--out", trajectory]) == EXIT_OK
    with open(trajectory, encoding="utf-8") as f:
        rows = read_report(f.read()).rows
    assert rows[0]["dual_bound"] == pytest.approx(-0.5)
    assert rows[-1]["dual_bound"] >= rows[0]["dual_bound"]
    assert main(["root", WORKED, "--variant", "turbo"]) == EXIT_CONFIG


def test_cli_generate_and_solve(tmp_path):
    out_dir = str(tmp_path / "corpus")
    assert main(["generate", "--out-dir", out_dir, "--count", "2", "--seed", "5"]) == EXIT_OK
    names = sorted(os.listdir(out_dir))
    assert names == ["bigm_5.rlt.json", "knapsack_5.rlt.json", "mixed_5_000.rlt.json", "mixed_5_001.rlt.json"]
    assert main(["solve", os.path.join(out_dir, "mixed_5_000.rlt.json"), "--variant", "ierlt",
                 "--clock", "work"]) == EXIT_OK


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
