#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Read layer: calling-context pruning and parallel slice extraction"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pathspec

from .errors import DegenerateSummary, InvalidConfig, NoSuchMetric, NoSummary
from .frame import DType, Table
from .store import (
    SUMMARY_PROFILE_ID,
    CallingContextTree,
    ContextKind,
    DbHandle,
    Metadata,
    Scope,
    TraceEvent,
)

TOTAL_TIME_METRIC = "cputime"
DEFAULT_PRUNE_SHARE = 0.01

SLICE_SCHEMA = {
    "profile_id": DType.I64,
    "ctx_id": DType.I64,
    "metric_id": DType.I64,
    "value": DType.F64,
}
TRACE_SCHEMA = {
    "profile_id": DType.I64,
    "timestamp_ns": DType.U64,
    "ctx_id": DType.I64,
}


class PruneKind(Enum):
    MIN_INCLUSIVE_SHARE = "min_inclusive_share"
    DROP_KIND = "drop_kind"
    COLLAPSE_SUBTREE_GLOB = "collapse_subtree_glob"


@dataclass(frozen=True)
class PruneStrategy:
    kind: PruneKind
    threshold_frac: float = DEFAULT_PRUNE_SHARE
    kind_to_drop: Optional[ContextKind] = None
    name_glob: Optional[str] = None

    def __post_init__(self):
        if self.kind is PruneKind.MIN_INCLUSIVE_SHARE and not self.threshold_frac >= 0:
            raise InvalidConfig(f"Prune share must be >= 0, got {self.threshold_frac}")
        if self.kind is PruneKind.DROP_KIND and self.kind_to_drop is None:
            raise InvalidConfig("drop_kind needs a context kind")
        if self.kind is PruneKind.COLLAPSE_SUBTREE_GLOB and not self.name_glob:
            raise InvalidConfig("collapse_subtree_glob needs a pattern")

    @classmethod
    def min_share(cls, threshold_frac: float = DEFAULT_PRUNE_SHARE) -> "PruneStrategy":
        return cls(PruneKind.MIN_INCLUSIVE_SHARE, threshold_frac=threshold_frac)

    @classmethod
    def drop(cls, kind: ContextKind) -> "PruneStrategy":
        return cls(PruneKind.DROP_KIND, kind_to_drop=kind)

    @classmethod
    def collapse(cls, glob: str) -> "PruneStrategy":
        return cls(PruneKind.COLLAPSE_SUBTREE_GLOB, name_glob=glob)


class KeepSet:
    """Sorted set of retained ctx ids, closed under parent"""

    def __init__(self, mask: np.ndarray):
        self.mask = np.array(mask, dtype=bool)
        self.mask.flags.writeable = False
        self.ctx_ids = np.flatnonzero(self.mask)

    @classmethod
    def everything(cls, cct: CallingContextTree) -> "KeepSet":
        return cls(np.ones(len(cct), dtype=bool))

    def __len__(self) -> int:
        return len(self.ctx_ids)

    def __iter__(self):
        return iter(self.ctx_ids.tolist())

    def __contains__(self, ctx_id: object) -> bool:
        return isinstance(ctx_id, (int, np.integer)) and 0 <= ctx_id < len(self.mask) and bool(self.mask[ctx_id])

    def __eq__(self, other: object) -> bool:
        return isinstance(other, KeepSet) and np.array_equal(self.mask, other.mask)

    def is_parent_closed(self, cct: CallingContextTree) -> bool:
        kept = self.ctx_ids[self.ctx_ids != cct.root_id]
        return bool(self.mask[cct.root_id]) and bool(np.all(self.mask[cct.parents[kept]]))


def call_path(cct: CallingContextTree, ctx_id: int) -> str:
    """Names below the root joined by ``/`` (``main/solve/MPI_Wait``)."""
    return "/".join(cct.path_names(ctx_id)[1:])


def load_prune_patterns(path: Union[str, Path]) -> List[str]:
    """
    Read collapse patterns, one gitwildmatch pattern per line.

    Empty lines and ``#`` comments are skipped.

    :raises InvalidConfig: If the file cannot be read
    """
    patterns = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line and not line.startswith("#"):
                    patterns.append(line)
    except OSError as e:
        raise InvalidConfig(f"Cannot read prune file {path}: {e}")
    logging.debug(f"Loaded {len(patterns)} prune patterns from {path}")
    return patterns


def default_parallelism() -> int:
    return os.cpu_count() or 1


def summary_metric_values(h: DbHandle, metric_id: int) -> np.ndarray:
    """
    Dense per-context values of one metric in the summary profile.

    :raises NoSummary: If profile 0 is missing
    """
    if not h.meta.has_summary or not h.has_profile(SUMMARY_PROFILE_ID):
        raise NoSummary(f"{h.path} has no summary profile")
    records = h.read_profile_array(SUMMARY_PROFILE_ID, metric_ids=[metric_id])
    dense = np.zeros(len(h.meta.cct), dtype=np.float64)
    dense[records["ctx_id"]] = records["value"]
    return dense


def _share_mask(h: DbHandle, meta: Metadata, threshold: float) -> np.ndarray:
    metric = meta.find_metric(TOTAL_TIME_METRIC, Scope.INCLUSIVE)
    if metric is None:
        raise NoSuchMetric(f"Share pruning needs the inclusive {TOTAL_TIME_METRIC} metric")
    inclusive = summary_metric_values(h, metric.metric_id)
    total = inclusive[meta.cct.root_id]
    if total <= 0:
        raise DegenerateSummary("Summary root time is 0, cannot compute shares")
    return inclusive >= threshold * total


def _collapse_mask(cct: CallingContextTree, glob: str) -> np.ndarray:
    spec = pathspec.PathSpec.from_lines("gitwildmatch", [glob])
    matched = np.array(
        [False] + [spec.match_file(call_path(cct, c)) for c in range(1, len(cct))], dtype=bool
    )
    below_match = np.zeros(len(cct), dtype=bool)
    for level in cct.levels[1:]:
        parents = cct.parents[level]
        below_match[level] = matched[parents] | below_match[parents]
    return ~below_match


def compute_keep_set(h: DbHandle, meta: Metadata, strategies: Sequence[PruneStrategy]) -> KeepSet:
    """
    Evaluate pruning strategies on the summary profile.

    A context is kept iff every strategy keeps it and so do all its
    ancestors. The root is always kept.

    :param h: Open database
    :param meta: Its metadata
    :param strategies: Strategies to apply (all must agree)
    :return: Parent-closed keep set
    :raises NoSummary: If a share strategy is used without a summary profile
    :raises DegenerateSummary: If the summary root time is 0
    """
    cct = meta.cct
    mask = np.ones(len(cct), dtype=bool)
    for strategy in strategies:
        if strategy.kind is PruneKind.MIN_INCLUSIVE_SHARE:
            mask &= _share_mask(h, meta, strategy.threshold_frac)
        elif strategy.kind is PruneKind.DROP_KIND:
            mask &= cct.kinds != int(strategy.kind_to_drop)
        else:
            mask &= _collapse_mask(cct, strategy.name_glob)

    mask[cct.root_id] = True
    for level in cct.levels[1:]:
        mask[level] &= mask[cct.parents[level]]

    keep = KeepSet(mask)
    logging.debug(f"Keep set: {len(keep)} of {len(cct)} contexts after {len(strategies)} strategies")
    return keep


def _run(parallelism: int, fn: Callable, items: Sequence) -> list:
    if parallelism <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, items))


def read_requests(
    h: DbHandle,
    requests: Sequence[Tuple[int, Optional[np.ndarray], Optional[Sequence[int]]]],
    parallelism: int = 1,
) -> List[np.ndarray]:
    """
    Run (profile_id, ctx_ids, metric_ids) selective reads on a worker pool.

    :return: One record array per request, in request order
    """
    return _run(parallelism, lambda r: h.read_profile_array(r[0], r[1], r[2]), requests)


def records_to_table(pieces: Sequence[Tuple[int, np.ndarray]]) -> Table:
    """Stack (profile_id, records) pairs into a slice table."""
    if not pieces:
        return Table.empty(SLICE_SCHEMA)
    return Table.from_columns(
        {
            "profile_id": np.concatenate(
                [np.full(len(r), pid, dtype=np.int64) for pid, r in pieces]
            ),
            "ctx_id": np.concatenate([r["ctx_id"] for _, r in pieces]).astype(np.int64),
            "metric_id": np.concatenate([r["metric_id"] for _, r in pieces]).astype(np.int64),
            "value": np.concatenate([r["value"] for _, r in pieces]),
        },
        SLICE_SCHEMA,
    )


def ingest_profiles(
    h: DbHandle,
    profile_ids: Iterable[int],
    keep: Optional[KeepSet],
    metric_ids: Optional[Iterable[int]],
    parallelism: int = 1,
) -> Table:
    """
    Read the kept contexts of many profiles in parallel.

    :param h: Open database
    :param profile_ids: Profiles to read (deduplicated, read in ascending order)
    :param keep: Contexts to read (None reads all)
    :param metric_ids: Metrics to read (None reads all)
    :param parallelism: Worker count
    :return: Slice table sorted by (profile_id, ctx_id, metric_id)
    :raises NotFound: If a profile id is not indexed
    """
    ids = sorted(set(int(p) for p in profile_ids))
    ctx = None if keep is None else keep.ctx_ids
    metrics = None if metric_ids is None else sorted(set(metric_ids))
    results = read_requests(h, [(pid, ctx, metrics) for pid in ids], parallelism)
    table = records_to_table(list(zip(ids, results)))
    logging.debug(f"Ingested {len(table)} records from {len(ids)} profiles with {parallelism} workers")
    return table


def ingest_traces(
    h: DbHandle,
    profile_ids: Iterable[int],
    t0_ns: int,
    t1_ns: int,
    parallelism: int = 1,
) -> Tuple[Table, Dict[int, Optional[TraceEvent]]]:
    """
    Read one time window from many traces in parallel.

    :return: Trace table sorted by (profile_id, timestamp_ns) and the
        carry-in event of every profile
    :raises NotFound: If a profile has no trace
    """
    if t0_ns > t1_ns:
        raise ValueError(f"Empty time window: {t0_ns} > {t1_ns}")
    ids = sorted(set(int(p) for p in profile_ids))
    results = _run(parallelism, lambda pid: h.read_trace_window_array(pid, t0_ns, t1_ns), ids)

    carry_in = {pid: carry for pid, (_, carry) in zip(ids, results)}
    if not ids:
        return Table.empty(TRACE_SCHEMA), carry_in
    events = [e for e, _ in results]
    table = Table.from_columns(
        {
            "profile_id": np.concatenate([np.full(len(e), pid, dtype=np.int64) for pid, e in zip(ids, events)]),
            "timestamp_ns": np.concatenate([e["timestamp_ns"] for e in events]),
            "ctx_id": np.concatenate([e["ctx_id"] for e in events]).astype(np.int64),
        },
        TRACE_SCHEMA,
    )
    return table, carry_in
