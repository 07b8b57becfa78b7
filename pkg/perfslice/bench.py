#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Timing suites for parallel ingestion and the frame operations"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from . import frame
from .frame import Backend, Column, DType, Table
from .ingest import ingest_profiles
from .store import DbHandle

SUITES = ("ingest", "frame")
DEFAULT_REPEAT = 10
DEFAULT_INGEST_SIZES = (10, 100, 1000)
DEFAULT_FRAME_SIZES = (10_000, 100_000, 1_000_000)


@dataclass
class BenchRow:
    suite: str
    size: int
    op: str
    parallelism: int
    mean_s: float
    repeat: int


def time_call(fn: Callable[[], object], repeat: int) -> float:
    """Mean wall time of ``repeat`` calls, in seconds."""
    if repeat < 1:
        raise ValueError("repeat must be >= 1")
    total = 0.0
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        total += time.perf_counter() - start
    return total / repeat


def ingest_suite(
    h: DbHandle,
    sizes: Sequence[int],
    parallelisms: Sequence[int],
    repeat: int = DEFAULT_REPEAT,
) -> List[BenchRow]:
    """
    Time :func:`ingest_profiles` over the first ``size`` rank profiles.

    Sizes above the profile count are clamped.
    """
    available = h.meta.rank_profile_ids()
    rows = []
    for size in sizes:
        if size > len(available):
            logging.warning(f"Only {len(available)} profiles available, clamping size {size}")
        ids = available[:size]
        for p in parallelisms:
            mean = time_call(lambda: ingest_profiles(h, ids, None, None, p), repeat)
            rows.append(BenchRow("ingest", len(ids), "ingest_profiles", int(p), mean, repeat))
            logging.debug(f"ingest {len(ids)} profiles x{p}: {mean:.6f} s")
    return rows


def random_table(n: int, seed: int = 0, n_keys: int = 1000) -> Table:
    """Table with an i64 ``key`` column and f64 ``x``/``y`` columns."""
    rng = np.random.default_rng(seed)
    return Table.from_columns(
        {
            "key": rng.integers(0, max(1, n_keys), size=n, dtype=np.int64),
            "x": rng.standard_normal(n),
            "y": rng.standard_normal(n),
        }
    )


def frame_operations(t: Table, backend: Backend) -> Dict[str, Callable[[], object]]:
    """One closure per benchmarked operation, keyed by operation name."""
    keys = np.unique(t["key"])
    right = Table.from_columns({"key": keys, "w": keys.astype(np.float64)})
    x, y = t.column("x"), t.column("y")
    ops = {
        "group_aggregate": lambda: frame.group_aggregate(t, ["key"], [("x", "mean"), ("y", "sum")], backend),
        "sort": lambda: frame.sort(t, ["key", "x"], True, backend),
        "filter": lambda: frame.filter_rows(t, ("x", ">", 0.0), backend),
        "merge": lambda: frame.merge(t, right, ["key"], backend=backend),
        "vector_add": lambda: frame.vector_add(x, y, backend),
        "in_place_multiply": lambda: frame.in_place_multiply(x, 1.5, backend),
        "reduce_sum": lambda: frame.reduce_sum(x, backend),
        "cumulative_sum": lambda: frame.cumulative_sum(x, backend),
        "scalar_compare": lambda: frame.scalar_compare(x, "<", 0.5, backend),
    }
    return ops


def frame_suite(
    sizes: Sequence[int],
    backends: Sequence[Backend],
    repeat: int = DEFAULT_REPEAT,
    seed: int = 0,
) -> List[BenchRow]:
    """Time every frame operation for each size and backend."""
    rows = []
    for size in sizes:
        t = random_table(size, seed)
        for backend in backends:
            for op, fn in frame_operations(t, backend).items():
                mean = time_call(fn, repeat)
                rows.append(BenchRow("frame", size, op, backend.workers, mean, repeat))
    logging.debug(f"frame suite: {len(rows)} timings")
    return rows


def bench_table(rows: Sequence[BenchRow]) -> Table:
    return Table(
        [
            Column("suite", np.array([r.suite for r in rows], dtype=object), DType.STR),
            Column("size", np.array([r.size for r in rows], dtype=np.int64), DType.I64),
            Column("op", np.array([r.op for r in rows], dtype=object), DType.STR),
            Column("parallelism", np.array([r.parallelism for r in rows], dtype=np.int64), DType.I64),
            Column("mean_s", np.array([r.mean_s for r in rows], dtype=np.float64), DType.F64),
            Column("repeat", np.array([r.repeat for r in rows], dtype=np.int64), DType.I64),
        ]
    )
