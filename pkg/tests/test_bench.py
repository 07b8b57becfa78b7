#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Tests for the timing suites"""

import tempfile
from pathlib import Path

import pytest

from perfslice.bench import (
    BenchRow,
    bench_table,
    frame_operations,
    frame_suite,
    ingest_suite,
    random_table,
    time_call,
)
from perfslice.frame import Backend
from perfslice.store import open_database

from .scenarios import build, gamess_config


def test_time_call_counts_calls():
    calls = []
    mean = time_call(lambda: calls.append(1), 3)
    assert len(calls) == 3
    assert mean >= 0.0
    with pytest.raises(ValueError):
        time_call(lambda: None, 0)


def test_random_table_is_seeded():
    assert random_table(100, seed=4).equals(random_table(100, seed=4))
    assert random_table(100).column_names == ["key", "x", "y"]


def test_frame_operations_cover_the_engine():
    ops = frame_operations(random_table(50), Backend.sequential())
    assert sorted(ops) == sorted(
        [
            "group_aggregate",
            "sort",
            "filter",
            "merge",
            "vector_add",
            "in_place_multiply",
            "reduce_sum",
            "cumulative_sum",
            "scalar_compare",
        ]
    )


def test_frame_suite_rows():
    rows = frame_suite([100, 200], [Backend.sequential(), Backend.parallel(2)], repeat=1)
    assert len(rows) == 2 * 2 * 9
    assert {r.parallelism for r in rows} == {1, 2}
    assert {r.size for r in rows} == {100, 200}


def test_ingest_suite_clamps_sizes():
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "db"
        build(gamess_config(), path)
        with open_database(path) as h:
            rows = ingest_suite(h, [2, 50], [1, 2], repeat=1)
    assert [(r.size, r.parallelism) for r in rows] == [(2, 1), (2, 2), (8, 1), (8, 2)]
    assert all(r.op == "ingest_profiles" for r in rows)


def test_bench_table_columns():
    table = bench_table([BenchRow("frame", 10, "sort", 1, 0.5, 2)])
    assert table.column_names == ["suite", "size", "op", "parallelism", "mean_s", "repeat"]
    assert table.to_records() == [
        {"suite": "frame", "size": 10, "op": "sort", "parallelism": 1, "mean_s": 0.5, "repeat": 2}
    ]
    assert len(bench_table([])) == 0
