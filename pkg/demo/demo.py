#!/usr/bin/env python

# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file

"""Demo script for the perfslice tool"""

import tempfile
from pathlib import Path
import sys

# Add project to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from perfslice.main import main

DEMO_DIR = Path(__file__).parent


def banner(title: str):
    print()
    print("=" * 70)
    print(title)
    print("=" * 70)
    print()


def run(*argv) -> int:
    argv = [str(a) for a in argv]
    print(f"$ perfslice {' '.join(argv)}")
    code = main(argv)
    if code != 0:
        print(f"❌ exited with code {code}")
    print()
    return code


def demo_iterative(work_dir: Path):
    """Generate the iterative GPU workload and walk through the reports"""
    db = work_dir / "iterative"
    banner("Iterative GPU workload")
    run("gen", DEMO_DIR / "iterative.yaml", "--out", db)
    run("info", "--db", db)

    banner("Slice: exclusive GPU time of every kernel on ranks 0-3")
    run("query", "rank(0-3)", "function(gpu_rhf_*)", "gker:sum (e)", "--db", db)

    banner("Kernel imbalance")
    run("imbalance", "--db", db)

    banner("Iterations, variability and projected savings")
    run("iters", "--db", db, "--model-csv", work_dir / "model.csv")
    print(f"✓ Model written to {work_dir / 'model.csv'}")


def demo_congestion(work_dir: Path):
    """Generate the rack congestion workload and locate the slow racks"""
    db = work_dir / "congestion"
    banner("Rack congestion workload")
    run("gen", DEMO_DIR / "congestion.yaml", "--out", db)
    run("validate", "--db", db)

    banner("Congestion diagnosis (DBSCAN)")
    run("congestion", "--db", db, "--prune-file", DEMO_DIR / "prune.txt")

    banner("Congestion diagnosis (K-Means, k=2)")
    run("congestion", "--db", db, "--cluster", "kmeans", "--k", 2)


if __name__ == "__main__":
    with tempfile.TemporaryDirectory(prefix="perfslice_demo_") as tmp:
        print(f"Working in: {tmp}")
        demo_iterative(Path(tmp))
        demo_congestion(Path(tmp))
    banner("Demo complete")
