#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Tests for calling-context pruning and parallel ingestion"""

import tempfile
import unittest
from pathlib import Path

import numpy as np
import pytest

from perfslice.errors import DegenerateSummary, InvalidConfig, NoSummary, NotFound
from perfslice.ingest import (
    KeepSet,
    PruneStrategy,
    call_path,
    compute_keep_set,
    ingest_profiles,
    ingest_traces,
    load_prune_patterns,
    summary_metric_values,
)
from perfslice.store import ContextKind, DatabaseImage, Metadata, make_records, open_database, write_database

from .scenarios import GAMESS_RANKS, build, congestion_config, gamess_config
from .test_store import small_image


@pytest.fixture
def small_db():
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "db"
        write_database(small_image(), path)
        with open_database(path) as h:
            yield h


def _write(image: DatabaseImage, tmpdir: str):
    path = Path(tmpdir) / "db"
    write_database(image, path)
    return open_database(path)


# ============================================================================
# PRUNING
# ============================================================================


def test_call_path(small_db):
    assert call_path(small_db.meta.cct, 3) == "main/loop/solver.c:42"
    assert call_path(small_db.meta.cct, 0) == ""


def test_no_strategy_keeps_everything(small_db):
    keep = compute_keep_set(small_db, small_db.meta, [])
    assert keep == KeepSet.everything(small_db.meta.cct)
    assert len(keep) == 5


def test_min_share_uses_summary_inclusive_time(small_db):
    np.testing.assert_array_equal(summary_metric_values(small_db, 0), [10.0, 10.0, 6.0, 0.0, 0.0])
    keep = compute_keep_set(small_db, small_db.meta, [PruneStrategy.min_share(0.5)])
    assert list(keep) == [0, 1, 2]
    keep = compute_keep_set(small_db, small_db.meta, [PruneStrategy.min_share(0.7)])
    assert list(keep) == [0, 1]


def test_threshold_above_one_keeps_only_root(small_db):
    keep = compute_keep_set(small_db, small_db.meta, [PruneStrategy.min_share(1.5)])
    assert list(keep) == [0]


def test_drop_kind_is_parent_closed(small_db):
    keep = compute_keep_set(small_db, small_db.meta, [PruneStrategy.drop(ContextKind.LOOP)])
    assert list(keep) == [0, 1, 4]
    assert keep.is_parent_closed(small_db.meta.cct)


def test_collapse_keeps_matching_node_only(small_db):
    keep = compute_keep_set(small_db, small_db.meta, [PruneStrategy.collapse("main/loop")])
    assert list(keep) == [0, 1, 2, 4]
    keep = compute_keep_set(small_db, small_db.meta, [PruneStrategy.collapse("*/loop")])
    assert 3 not in keep


def test_strategies_compose(small_db):
    keep = compute_keep_set(
        small_db, small_db.meta, [PruneStrategy.drop(ContextKind.GPU_KERNEL), PruneStrategy.collapse("main")]
    )
    assert list(keep) == [0, 1]


def test_share_without_summary():
    image = small_image()
    profiles = [p for p in image.meta.profiles if p.profile_id != 0]
    image.meta = Metadata(image.meta.metrics, profiles, image.meta.cct)
    del image.records[0]
    with tempfile.TemporaryDirectory() as tmpdir:
        with _write(image, tmpdir) as h:
            with pytest.raises(NoSummary):
                compute_keep_set(h, h.meta, [PruneStrategy.min_share()])
            assert len(compute_keep_set(h, h.meta, [PruneStrategy.drop(ContextKind.LINE)])) == 4


def test_share_with_zero_root():
    image = small_image()
    image.records[0] = make_records([(0, 0, 0.0)])
    with tempfile.TemporaryDirectory() as tmpdir:
        with _write(image, tmpdir) as h:
            with pytest.raises(DegenerateSummary):
                compute_keep_set(h, h.meta, [PruneStrategy.min_share()])


def test_invalid_strategies():
    with pytest.raises(InvalidConfig):
        PruneStrategy.min_share(-0.1)
    with pytest.raises(InvalidConfig):
        PruneStrategy.collapse("")


def test_load_prune_patterns():
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "prune.txt"
        path.write_text("# comm layers\nmain/MPI_*\n\n  */hypre_*  \n")
        assert load_prune_patterns(path) == ["main/MPI_*", "*/hypre_*"]
        with pytest.raises(InvalidConfig):
            load_prune_patterns(Path(tmpdir) / "missing.txt")


# ============================================================================
# PARALLEL INGESTION
# ============================================================================


class TestIngestion(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmpdir = tempfile.TemporaryDirectory()
        path = Path(cls.tmpdir.name) / "db"
        cls.image, cls.truth = build(gamess_config(), path)
        cls.h = open_database(path)

    @classmethod
    def tearDownClass(cls):
        cls.h.close()
        cls.tmpdir.cleanup()

    def test_profiles_sorted_and_complete(self):
        table = ingest_profiles(self.h, [3, 1, 2, 1], None, None, parallelism=1)
        self.assertEqual(table.column_names, ["profile_id", "ctx_id", "metric_id", "value"])
        self.assertEqual(sorted(set(table["profile_id"].tolist())), [1, 2, 3])
        expected = sum(len(self.image.records[p]) for p in (1, 2, 3))
        self.assertEqual(len(table), expected)
        keys = list(zip(table["profile_id"].tolist(), table["ctx_id"].tolist(), table["metric_id"].tolist()))
        self.assertEqual(keys, sorted(keys))

    def test_parallel_equals_sequential(self):
        ids = self.h.meta.rank_profile_ids()
        seq = ingest_profiles(self.h, ids, None, [1, 3], parallelism=1)
        par = ingest_profiles(self.h, ids, None, [1, 3], parallelism=4)
        self.assertTrue(seq.equals(par))
        self.assertEqual(set(seq["metric_id"].tolist()), {1, 3})

    def test_keep_set_restricts_contexts(self):
        keep = compute_keep_set(self.h, self.h.meta, [PruneStrategy.min_share()])
        j01 = self.truth.kernel_ctx["gpu_rhf_j01_ssss_"]
        j05 = self.truth.kernel_ctx["gpu_rhf_j05_ppps_"]
        self.assertNotIn(j01, keep)
        self.assertIn(j05, keep)
        table = ingest_profiles(self.h, self.h.meta.rank_profile_ids(), keep, None, parallelism=2)
        self.assertNotIn(j01, set(table["ctx_id"].tolist()))
        self.assertIn(j05, set(table["ctx_id"].tolist()))

    def test_unknown_profile(self):
        with self.assertRaises(NotFound):
            ingest_profiles(self.h, [GAMESS_RANKS + 5], None, None)

    def test_trace_window(self):
        start = self.truth.boundaries_ns[1][2]
        end = self.truth.boundaries_ns[1][3]
        table, carry_in = ingest_traces(self.h, [1, 2], start, end, parallelism=2)
        first = table["profile_id"] == 1
        self.assertEqual(int(table["timestamp_ns"][first][0]), start)
        self.assertTrue(np.all(table["timestamp_ns"][first] < end))
        self.assertIsNotNone(carry_in[1])
        self.assertEqual(carry_in[1].ctx_id, self.h.meta.cct.find("main")[0])

    def test_trace_window_errors(self):
        with self.assertRaises(ValueError):
            ingest_traces(self.h, [1], 10, 5)
        with self.assertRaises(NotFound):
            ingest_traces(self.h, [0], 0, 10)
        table, carry_in = ingest_traces(self.h, [], 0, 10)
        self.assertEqual(len(table), 0)
        self.assertEqual(carry_in, {})


class TestIngestionAtScale(unittest.TestCase):
    """Two thousand rank profiles, read with one and with eight workers"""

    @classmethod
    def setUpClass(cls):
        cls.tmpdir = tempfile.TemporaryDirectory()
        path = Path(cls.tmpdir.name) / "db"
        cls.image, _ = build(congestion_config(n_nodes=200, outliers=10), path)
        cls.h = open_database(path)

    @classmethod
    def tearDownClass(cls):
        cls.h.close()
        cls.tmpdir.cleanup()

    def test_profile_count(self):
        self.assertEqual(len(self.h.meta.rank_profile_ids()), 2000)

    def test_all_records(self):
        ids = self.h.meta.rank_profile_ids()
        seq = ingest_profiles(self.h, ids, None, None, parallelism=1)
        par = ingest_profiles(self.h, ids, None, None, parallelism=8)
        self.assertTrue(seq.equals(par))
        self.assertEqual(len(seq), sum(len(self.image.records[p]) for p in ids))

    def test_pruned_and_metric_filtered(self):
        keep = compute_keep_set(self.h, self.h.meta, [PruneStrategy.min_share(0.02)])
        ids = self.h.meta.rank_profile_ids()[::3]
        seq = ingest_profiles(self.h, ids, keep, [0, 1], parallelism=1)
        par = ingest_profiles(self.h, ids, keep, [0, 1], parallelism=8)
        self.assertTrue(seq.equals(par))
        self.assertTrue(set(seq["ctx_id"].tolist()) <= set(keep.ctx_ids.tolist()))

    def test_trace_windows(self):
        ids = sorted(self.image.traces)[:64]
        seq, seq_carry = ingest_traces(self.h, ids, 10**9, 3 * 10**9, parallelism=1)
        par, par_carry = ingest_traces(self.h, ids, 10**9, 3 * 10**9, parallelism=8)
        self.assertEqual(len(ids), 64)
        self.assertTrue(seq.equals(par))
        self.assertEqual(seq_carry, par_carry)
