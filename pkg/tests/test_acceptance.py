#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""End-to-end checks of the two reference workloads through the command line"""

import json
import tempfile
import unittest
from contextlib import redirect_stdout
from io import StringIO
from pathlib import Path

from perfslice.main import main
from perfslice.topology import parse_node_name

from .scenarios import (
    CONGESTED_RACKS,
    GAMESS_KERNELS,
    GAMESS_SAVINGS,
    GAMESS_TOTAL_TIME_S,
    GAMESS_TOTALS,
    build,
    congestion_config,
    gamess_config,
)


def run_json(*argv) -> dict:
    buf = StringIO()
    with redirect_stdout(buf):
        code = main([str(a) for a in argv] + ["--format", "json"])
    assert code == 0
    return json.loads(buf.getvalue())


class TestIterativeGpuWorkload(unittest.TestCase):
    """Eight ranks, eleven iterations, six GPU kernels"""

    @classmethod
    def setUpClass(cls):
        cls.tmpdir = tempfile.TemporaryDirectory()
        cls.db = Path(cls.tmpdir.name) / "gamess"
        cls.image, cls.truth = build(gamess_config(), cls.db)

    @classmethod
    def tearDownClass(cls):
        cls.tmpdir.cleanup()

    def test_savings_table(self):
        report = run_json("iters", "--db", self.db, "--total-time", GAMESS_TOTAL_TIME_S)
        rows = {r["ctx_id"]: r for r in report["savings"]["rows"]}
        for (name, mean, peak), saving, total in zip(GAMESS_KERNELS, GAMESS_SAVINGS, GAMESS_TOTALS):
            row = rows[self.truth.kernel_ctx[name]]
            self.assertAlmostEqual(row["avg_mean_s"], mean, places=5)
            self.assertAlmostEqual(row["avg_max_s"], peak, places=5)
            self.assertAlmostEqual(row["savings_per_iter_s"], saving, places=5)
            self.assertAlmostEqual(row["total_reduction_s"], total, places=4)
        self.assertAlmostEqual(report["savings"]["total_savings_s"], 28.083, places=3)
        self.assertAlmostEqual(report["savings"]["speedup_frac"], 0.3228, delta=5e-4)

    def test_kernel_ranking(self):
        rows = run_json("imbalance", "--db", self.db)
        self.assertEqual([r["name"] for r in rows], [name for name, _, _ in GAMESS_KERNELS])
        self.assertAlmostEqual(rows[0]["execution_share_frac"], 0.4289, delta=1e-3)
        self.assertLess(rows[-1]["execution_share_frac"], 0.002)

    def test_pruned_query_keeps_large_kernels(self):
        records = run_json("query", "summary", "function(gpu_rhf_*)", "gker:sum (e)", "--db", self.db)
        names = {self.image.meta.cct.names[r["ctx_id"]] for r in records}
        self.assertNotIn("gpu_rhf_j01_ssss_", names)
        self.assertIn("gpu_rhf_j05_ppps_", names)


class TestRackCongestion(unittest.TestCase):
    """1000 nodes, 202 of them slowed down at one MPI_Allreduce call site"""

    @classmethod
    def setUpClass(cls):
        cls.tmpdir = tempfile.TemporaryDirectory()
        cls.db = Path(cls.tmpdir.name) / "hypre"
        cls.image, cls.truth = build(congestion_config(), cls.db)
        cls.report = run_json("congestion", "--db", cls.db, "--callsite", "MPI_*")

    @classmethod
    def tearDownClass(cls):
        cls.tmpdir.cleanup()

    def test_worst_callsite(self):
        worst = self.report["worst_callsite"]
        self.assertEqual(worst["ctx_id"], self.truth.congested_ctx)
        self.assertEqual(worst["call_chain"][-3:], ["hypre_GMRESSetup", "hypre_BoomerAMGSetup", "MPI_Allreduce"])
        ratios = {r["ctx_id"]: r["balance_ratio"] for r in self.report["balance_ratios"]}
        self.assertGreaterEqual(ratios[worst["ctx_id"]], 0.35)
        self.assertLessEqual(ratios[worst["ctx_id"]], 0.45)
        self.assertEqual(min(ratios.values()), ratios[worst["ctx_id"]])

    def test_bottlenecks_sorted(self):
        values = [b["value"] for b in self.report["bottlenecks"]]
        self.assertEqual(values, sorted(values, reverse=True))
        self.assertEqual(self.report["bottlenecks"][0]["ctx_id"], self.truth.congested_ctx)

    def test_two_node_groups(self):
        self.assertEqual(sorted(self.report["clusters"].values()), [202, 798])
        self.assertEqual(self.report["noise"], 0)
        self.assertEqual(self.report["partition_comparison"]["off_block"], 0)

    def test_outliers_localized_to_racks(self):
        topology = self.report["topology"]
        self.assertEqual(topology["outliers"], 202)
        self.assertEqual(len(topology["racks"]), len(CONGESTED_RACKS))
        self.assertEqual([r["rack"] for r in topology["racks"]], CONGESTED_RACKS)
        outlier = self.report["outlier_cluster"]
        nodes = self.report["nodes"]
        self.assertEqual(len(nodes), 1000)
        flagged = sorted(
            n["hostname"]
            for n in nodes
            if parse_node_name(n["hostname"]).rack in CONGESTED_RACKS and n["value_mean"] > 1.5
        )
        self.assertEqual(flagged, sorted(self.truth.outlier_nodes))
        self.assertIn(str(outlier), self.report["clusters"])

    def test_majority_group_is_stable(self):
        stability = {s["k"]: s["node_intersections"] for s in self.report["kmeans_stability"]}
        self.assertEqual(sorted(stability), [2, 3, 4, 5])
        self.assertTrue(all(n >= 0 for n in stability.values()))
