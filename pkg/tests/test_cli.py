#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Tests for the perfslice command line"""

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

import pytest

from perfslice import __version__
from perfslice import main as cli
from perfslice.errors import (
    DegenerateSummary,
    FormatError,
    InvalidConfig,
    NoOutliers,
    NoPeriodicity,
    NoSuchMetric,
    NoSummary,
    ParseError,
)
from perfslice.main import exit_code_for, main
from perfslice.store import write_database

from .scenarios import GAMESS_ITERATIONS, GAMESS_KERNELS, GAMESS_RANKS, J04_CV_PCT, build, gamess_config
from .test_store import reverse_profile_body, small_image

PROJECT_ROOT = Path(__file__).parent.parent

SCENARIO_YAML = """\
kind: iterative
n_ranks: 4
n_iterations: 5
seed: 3
anchor_overhead_ns: 1000
kernels:
  - name: gpu_axpy
    mean_time_s: 0.2
    across_rank_spread: [1.6, 0.8, 0.8, 0.8]
  - name: gpu_dot
    mean_time_s: 0.05
copies:
  - name: hipMemcpy_h2d
    mean_time_s: 0.001
"""


@pytest.fixture(scope="module")
def gamess_db():
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "gamess"
        build(gamess_config(), path)
        yield path


@pytest.fixture
def small_db():
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "small"
        write_database(small_image(), path)
        yield path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().out


def run_json(capsys, *argv):
    code, out = run(capsys, *argv, "--format", "json")
    assert code == 0
    return json.loads(out)


# ============================================================================
# ARGUMENT PARSING AND EXIT CODES
# ============================================================================


def test_version_via_module():
    result = subprocess.run(
        [sys.executable, "-m", "perfslice.main", "--version"],
        capture_output=True,
        text=True,
        cwd=PROJECT_ROOT,
    )
    assert result.returncode == 0
    assert f"perfslice {__version__}" in result.stdout


def test_global_options_before_or_after_command(small_db):
    outputs = []
    for argv in (["--db", str(small_db), "--format", "json", "info"], ["info", "--db", str(small_db), "--format", "json"]):
        result = subprocess.run(
            [sys.executable, "-m", "perfslice.main", *argv],
            capture_output=True,
            text=True,
            cwd=PROJECT_ROOT,
        )
        assert result.returncode == 0, result.stderr
        outputs.append(json.loads(result.stdout))
    assert outputs[0] == outputs[1]


def test_command_is_required():
    with pytest.raises(SystemExit) as exc_info:
        main([])
    assert exc_info.value.code == 2


@pytest.mark.parametrize(
    "error,code",
    [
        (InvalidConfig("x"), 2),
        (ParseError("x", 0), 3),
        (NoSuchMetric("x"), 4),
        (NoSummary("x"), 5),
        (DegenerateSummary("x"), 5),
        (NoPeriodicity("x"), 6),
        (NoOutliers("x"), 7),
        (FormatError("x"), 1),
        (RuntimeError("x"), 255),
    ],
)
def test_exit_codes(error, code):
    assert exit_code_for(error) == code


def test_unexpected_error_exits_255(small_db, monkeypatch):
    def boom(args, cfg):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "cmd_info", boom)
    assert main(["info", "--db", str(small_db)]) == 255


def test_missing_database_option(capsys):
    code, _ = run(capsys, "info")
    assert code == 2


def test_invalid_jobs_environment(small_db, monkeypatch, capsys):
    monkeypatch.setenv("PERFSLICE_JOBS", "lots")
    code, _ = run(capsys, "info", "--db", small_db)
    assert code == 2


def test_config_file_sets_format(small_db, capsys):
    config = small_db.parent / "perfslice.yaml"
    config.write_text("format: json\njobs: 2\n")
    code, out = run(capsys, "info", "--db", small_db, "--config", config)
    assert code == 0
    assert json.loads(out)["ranks"] == 2


# ============================================================================
# GEN, INFO, VALIDATE
# ============================================================================


class TestGenerate:
    def test_gen_writes_database_and_truth(self, tmp_path, capsys):
        scenario = tmp_path / "iter.yaml"
        scenario.write_text(SCENARIO_YAML)
        out = tmp_path / "db"
        code, _ = run(capsys, "gen", scenario, "--out", out)
        assert code == 0
        truth = json.loads((out / "truth.json").read_text())
        assert truth["kind"] == "iterative"
        assert set(truth["kernel_ctx"]) == {"gpu_axpy", "gpu_dot", "hipMemcpy_h2d"}

        info = run_json(capsys, "info", "--db", out)
        assert info["profiles"] == 5
        assert info["ranks"] == 4
        assert info["has_summary"] is True
        assert info["traces"] == 4
        assert info["contexts"] == 7
        assert info["max_depth"] == 4
        assert "cputime (i)" in info["metrics"]
        assert "gker (e)" in info["metrics"]

    def test_gen_to_db_option(self, tmp_path, capsys):
        scenario = tmp_path / "iter.yaml"
        scenario.write_text(SCENARIO_YAML)
        code, _ = run(capsys, "gen", scenario, "--db", tmp_path / "db", "--seed", 9)
        assert code == 0
        assert (tmp_path / "db" / "meta.bin").exists()

    def test_gen_needs_output(self, tmp_path, capsys):
        scenario = tmp_path / "iter.yaml"
        scenario.write_text(SCENARIO_YAML)
        code, _ = run(capsys, "gen", scenario)
        assert code == 2

    def test_gen_rejects_bad_scenario(self, tmp_path, capsys):
        scenario = tmp_path / "bad.yaml"
        scenario.write_text("kind: iterative\nn_ranks: 0\nn_iterations: 1\nkernels: []\n")
        code, _ = run(capsys, "gen", scenario, "--out", tmp_path / "db")
        assert code == 2


def test_info_csv(small_db, capsys):
    code, out = run(capsys, "info", "--db", small_db)
    assert code == 0
    lines = out.splitlines()
    assert "ranks,2" in lines
    assert "metrics,cputime (i);cputime (e)" in lines


def test_validate(small_db, capsys):
    code, out = run(capsys, "validate", "--db", small_db)
    assert code == 0
    assert out == ""
    reverse_profile_body(small_db, 1)
    code, out = run(capsys, "validate", "--db", small_db)
    assert code == 1
    assert out.splitlines()[0].startswith("profile.db profile 1 #1")


def test_open_failure(small_db, capsys):
    (small_db / "profile.db").write_bytes(b"XXXX")
    code, _ = run(capsys, "info", "--db", small_db)
    assert code == 1


# ============================================================================
# QUERY
# ============================================================================


def test_query_csv(small_db, capsys):
    code, out = run(capsys, "query", "rank", "function(axpy_kernel)", "cputime:sum (e)", "--db", small_db, "--prune-share", 0)
    assert code == 0
    assert out.split("\r\n")[:2] == ["profile_id,rank,ctx_id,metric_id,value", "2,1,4,1,3.0"]


def test_query_with_default_pruning(small_db, capsys):
    records = run_json(capsys, "query", "rank", "*", "cputime:sum (e)", "--db", small_db)
    assert sorted({r["ctx_id"] for r in records}) == [2]


def test_query_collapse(small_db, capsys):
    records = run_json(
        capsys, "query", "rank", "*", "cputime:sum (e)", "--db", small_db, "--prune-share", 0, "--collapse", "main/loop"
    )
    assert sorted({r["ctx_id"] for r in records}) == [2, 4]


def test_query_traces(small_db, capsys):
    records = run_json(
        capsys, "query", "rank(0)", "*", "cputime:sum (e)", "--db", small_db, "--traces", "--window", "10:25"
    )
    assert records == [{"profile_id": 1, "timestamp_ns": 10, "ctx_id": 2}, {"profile_id": 1, "timestamp_ns": 20, "ctx_id": 3}]


def test_query_errors(small_db, capsys):
    assert run(capsys, "query", "rank(", "*", "cputime:sum (e)", "--db", small_db)[0] == 3
    assert run(capsys, "query", "rank", "*", "gker:sum (e)", "--db", small_db)[0] == 4
    assert run(capsys, "query", "rank", "*", "cputime:sum (e)", "--db", small_db, "--window", "9:1")[0] == 3


# ============================================================================
# IMBALANCE AND ITERATIONS
# ============================================================================


def test_imbalance_report(gamess_db, capsys):
    rows = run_json(capsys, "imbalance", "--db", gamess_db, "-j", 2)
    assert [r["name"] for r in rows] == [name for name, _, _ in GAMESS_KERNELS]
    by_name = {r["name"]: r for r in rows}
    assert by_name["gpu_rhf_j05_ppps_"]["balance_ratio"] == pytest.approx(0.637, abs=5e-4)
    assert by_name["gpu_rhf_j04_psps_"]["balance_ratio"] == pytest.approx(0.504, abs=5e-4)
    assert by_name["gpu_rhf_j04_psps_"]["across_rank_cv_pct"] == pytest.approx(J04_CV_PCT, abs=0.01)
    assert by_name["gpu_rhf_j04_psps_"]["within_rank_cv_pct"] == pytest.approx(0.0, abs=1e-6)


def test_imbalance_without_gpu_metrics(small_db, capsys):
    code, out = run(capsys, "imbalance", "--db", small_db)
    assert code == 0
    assert out.startswith("ctx_id,name,execution_share_frac,balance_ratio")
    assert run(capsys, "imbalance", "--db", small_db, "--metric", "gker")[0] == 4


def test_iters_json(gamess_db, tmp_path, capsys):
    model_csv = tmp_path / "model.csv"
    report = run_json(capsys, "iters", "--db", gamess_db, "--total-time", 87, "--model-csv", model_csv)
    assert report["anchor"] == "gamess_scf_loop"
    assert report["iteration_counts"] == {str(p): GAMESS_ITERATIONS for p in range(1, GAMESS_RANKS + 1)}
    assert report["skipped_traces"] == []
    assert report["savings"]["total_savings_s"] == pytest.approx(28.083, abs=1e-3)
    assert report["savings"]["speedup_frac"] == pytest.approx(0.3228, abs=5e-4)
    assert model_csv.read_text().startswith("ctx_id,trace_id,iteration,time_incl_s,time_excl_s")


def test_iters_csv(gamess_db, capsys):
    code, out = run(capsys, "iters", "--db", gamess_db, "--total-time", 87, "--anchor", "gamess_scf_loop")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "ctx_id,avg_mean_s,avg_max_s,savings_per_iter_s,total_reduction_s"
    assert lines[-2] == "total_savings_s,total_time_s,speedup_frac"
    total, time_s, _ = (float(v) for v in lines[-1].split(","))
    assert total == pytest.approx(28.083, abs=1e-3)
    assert time_s == 87.0


def test_iters_anchor_errors(gamess_db, small_db, capsys):
    assert run(capsys, "iters", "--db", gamess_db, "--anchor", "no_such_loop")[0] == 2
    assert run(capsys, "iters", "--db", small_db)[0] == 6


# ============================================================================
# CONGESTION AND BENCH
# ============================================================================


def test_congestion_without_callsites(small_db, capsys):
    assert run(capsys, "congestion", "--db", small_db)[0] == 7


def test_bench_frame(capsys):
    rows = run_json(capsys, "bench", "--suite", "frame", "--sizes", "100", "--repeat", 1, "-j", 2)
    assert len(rows) == 18
    assert {r["parallelism"] for r in rows} == {1, 2}


def test_bench_ingest(gamess_db, capsys):
    rows = run_json(capsys, "bench", "--db", gamess_db, "--sizes", "2,4", "--repeat", 1, "-j", 1)
    assert [(r["size"], r["parallelism"]) for r in rows] == [(2, 1), (4, 1)]


def test_bench_rejects_bad_sizes(capsys):
    with pytest.raises(SystemExit):
        main(["bench", "--sizes", "10,x"])


def test_copied_database_still_valid(gamess_db, tmp_path, capsys):
    copy = tmp_path / "copy"
    shutil.copytree(gamess_db, copy)
    assert run(capsys, "validate", "--db", copy)[0] == 0
