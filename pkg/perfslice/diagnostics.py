#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Imbalance metrics, GPU kernel discovery, clustering and node correlation"""

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DegenerateSummary,
    EmptyInput,
    InsufficientData,
    InvalidEps,
    InvalidK,
    InvalidTotal,
    LengthMismatch,
    NotFound,
    UndefinedCV,
)
from .frame import Column, DType, Table, group_aggregate
from .itermodel import TriModel
from .store import CallingContextTree, ContextKind, Metadata, Scope

GPU_METRICS = ("gker", "gxcopy", "gimopy")
KMEANS_TOLERANCE = 1e-12
KMEANS_MAX_ITERS = 300
DEFAULT_MIN_PTS = 4
DEFAULT_EPS_FRAC = 0.05
DISTANCE_CHUNK = 1024


@dataclass
class ImbalanceRow:
    ctx_id: int
    name: str
    execution_share_frac: float
    balance_ratio: float
    across_rank_cv_pct: Optional[float] = None
    within_rank_cv_pct: Optional[float] = None


@dataclass
class SavingsRow:
    ctx_id: int
    avg_mean_s: float
    avg_max_s: float
    savings_per_iter_s: float
    total_reduction_s: float


@dataclass
class SavingsReport:
    rows: List[SavingsRow]
    n_iterations: int
    total_savings_s: float
    total_time_s: float
    speedup_frac: float

    def to_dict(self) -> dict:
        return {
            "rows": [asdict(r) for r in self.rows],
            "n_iterations": self.n_iterations,
            "total_savings_s": self.total_savings_s,
            "total_time_s": self.total_time_s,
            "speedup_frac": self.speedup_frac,
        }


@dataclass
class Partition:
    """Cluster label per point; -1 marks density-clustering noise"""

    labels: np.ndarray
    # k-means objective after every assignment step
    history: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def clusters(self) -> List[int]:
        return sorted(int(c) for c in np.unique(self.labels) if c >= 0)

    @property
    def n_noise(self) -> int:
        return int(np.count_nonzero(self.labels < 0))

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def sizes(self) -> Dict[int, int]:
        return {c: int(np.count_nonzero(self.labels == c)) for c in self.clusters}


# ---------------------------------------------------------------------------
# Imbalance arithmetic
# ---------------------------------------------------------------------------


def balance_ratio(values: Sequence[float]) -> float:
    """
    Mean over max; 1.0 means perfect balance.

    :raises EmptyInput: If no values are given
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EmptyInput("balance_ratio needs at least one value")
    peak = float(v.max())
    if peak == 0:
        return 1.0
    return float(v.mean()) / peak


def cv(values: Sequence[float]) -> float:
    """
    Coefficient of variation in percent, population standard deviation.

    :raises EmptyInput: If no values are given
    :raises UndefinedCV: If the mean is not positive
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EmptyInput("cv needs at least one value")
    mean = float(v.mean())
    if mean <= 0:
        raise UndefinedCV(f"CV undefined for mean {mean}")
    return 100.0 * float(v.std()) / mean


def detect_active_gpu_metrics(
    summary: Table,
    meta: Metadata,
    names: Sequence[str] = GPU_METRICS,
    scope: Scope = Scope.EXCLUSIVE,
) -> List[int]:
    """
    GPU metrics with a non-zero total in the summary slice.

    :param summary: Slice of the summary profile
    :param meta: Database metadata
    :param names: Metric names considered GPU activity
    :param scope: Scope of the returned metric ids
    :return: Sorted metric ids
    """
    candidates = [m for m in meta.metrics if m.name in names and m.scope is scope]
    active = []
    metric_ids = summary["metric_id"]
    values = summary["value"]
    for m in candidates:
        if float(values[metric_ids == m.metric_id].sum()) > 0:
            active.append(m.metric_id)
    logging.debug(f"Active GPU metrics: {[meta.metric(m).name for m in active]}")
    return sorted(active)


def find_metric_contexts(
    summary: Table,
    metric_ids: Sequence[int],
    cct: CallingContextTree,
    min_share: float = 0.001,
) -> List[Tuple[int, float]]:
    """
    GPU kernel contexts carrying more than ``min_share`` of the metrics' total.

    :param summary: Slice of the summary profile (exclusive-scope metrics)
    :param metric_ids: Metrics summed per context
    :param cct: Calling context tree
    :param min_share: Share threshold
    :return: (ctx_id, share) pairs, largest share first
    :raises DegenerateSummary: If the metrics total zero
    """
    if not metric_ids:
        return []
    per_ctx = np.zeros(len(cct), dtype=np.float64)
    mask = np.isin(summary["metric_id"], np.asarray(metric_ids, dtype=np.int64))
    np.add.at(per_ctx, summary["ctx_id"][mask], summary["value"][mask])
    total = float(per_ctx.sum())
    if total <= 0:
        raise DegenerateSummary("Selected metrics total zero in the summary profile")
    shares = per_ctx / total
    kernels = np.flatnonzero((cct.kinds == int(ContextKind.GPU_KERNEL)) & (per_ctx > min_share * total))
    order = sorted(kernels.tolist(), key=lambda c: (-shares[c], c))
    return [(c, float(shares[c])) for c in order]


def iteration_cv_report(model: TriModel, ctx_id: int) -> Tuple[float, float]:
    """
    Across-rank and within-rank CV of one context, in percent.

    Across-rank: mean over iterations of the CV across traces.
    Within-rank: mean over traces of the CV across iterations.

    :raises InsufficientData: With fewer than 2 traces or 2 common iterations
    :raises UndefinedCV: If some iteration or trace has a mean time of zero
    """
    matrix = model.matrix(ctx_id)
    if matrix.shape[0] < 2 or matrix.shape[1] < 2:
        raise InsufficientData(
            f"Need >= 2 traces and >= 2 iterations, have {matrix.shape[0]} x {matrix.shape[1]}"
        )
    across = float(np.mean([cv(matrix[:, k]) for k in range(matrix.shape[1])]))
    within = float(np.mean([cv(matrix[r, :]) for r in range(matrix.shape[0])]))
    return across, within


def savings_report(model: TriModel, ctx_ids: Sequence[int], total_time_s: float) -> SavingsReport:
    """
    Time recoverable by balancing each context perfectly.

    Per context, the per-iteration mean and max across traces are averaged
    over iterations; their difference times the iteration count is the
    estimated reduction.

    :raises InvalidTotal: If ``total_time_s`` is not positive
    :raises InsufficientData: If the model has no common iteration
    """
    if not total_time_s > 0:
        raise InvalidTotal(f"Total time must be positive, got {total_time_s}")
    n_iter = model.n_iterations
    if n_iter < 1 or model.n_traces < 1:
        raise InsufficientData("Model has no common iteration")
    rows = []
    for ctx in ctx_ids:
        matrix = model.matrix(ctx)
        avg_mean = float(matrix.mean(axis=0).mean())
        avg_max = float(matrix.max(axis=0).mean())
        savings = avg_max - avg_mean
        rows.append(SavingsRow(int(ctx), avg_mean, avg_max, savings, savings * n_iter))
    total = float(sum(r.total_reduction_s for r in rows))
    return SavingsReport(rows, n_iter, total, float(total_time_s), total / total_time_s)


def imbalance_report(
    contexts: Sequence[Tuple[int, float]],
    per_rank: Dict[int, np.ndarray],
    cct: CallingContextTree,
    model: Optional[TriModel] = None,
) -> List[ImbalanceRow]:
    """
    Assemble one imbalance row per discovered context.

    :param contexts: (ctx_id, share) pairs from :func:`find_metric_contexts`
    :param per_rank: ctx_id -> per-rank totals
    :param cct: Calling context tree (for names)
    :param model: Iteration model; without it the across-rank CV comes from
        the per-rank totals and the within-rank CV is left empty
    """
    rows = []
    for ctx, share in contexts:
        values = per_rank.get(ctx, np.zeros(0))
        across = within = None
        if model is not None and ctx in model.ctx_ids:
            try:
                across, within = iteration_cv_report(model, ctx)
            except (InsufficientData, UndefinedCV) as e:
                logging.debug(f"No iteration CV for {cct.names[ctx]}: {e}")
        elif len(values):
            try:
                across = cv(values)
            except UndefinedCV:
                pass
        rows.append(
            ImbalanceRow(
                ctx_id=int(ctx),
                name=cct.names[ctx],
                execution_share_frac=float(share),
                balance_ratio=balance_ratio(values) if len(values) else 1.0,
                across_rank_cv_pct=across,
                within_rank_cv_pct=within,
            )
        )
    return rows


def rows_to_table(rows: Sequence, row_type: Optional[type] = None) -> Table:
    """Dataclass rows as a frame table (column order = field order)."""
    if not rows:
        names = [f.name for f in fields(row_type)] if row_type else []
        return Table([Column(n, np.zeros(0, dtype=object), DType.STR) for n in names])
    records = [asdict(r) for r in rows]
    data = {}
    for name in records[0]:
        values = [r[name] for r in records]
        if any(v is None for v in values):
            values = [np.nan if v is None else v for v in values]
        data[name] = np.array(values)
    return Table.from_columns(data)


# ---------------------------------------------------------------------------
# Clustering
# ---------------------------------------------------------------------------


def _as_points(points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if p.ndim != 2:
        raise ValueError(f"Points must be 1-D or 2-D, got shape {p.shape}")
    return p


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _relabel_by_centroid(labels: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    order = np.lexsort(tuple(reversed(centroids.T)))
    mapping = np.empty(len(order), dtype=np.int64)
    mapping[order] = np.arange(len(order))
    return mapping[labels]


def kmeans(points, k: int) -> Partition:
    """
    Lloyd's algorithm with deterministic quantile initialisation.

    Centroid j starts at the point of rank ``floor((j + 0.5) / k * n)`` along
    the first coordinate. Empty clusters are reseeded at the point farthest
    from its centroid. Labels are renumbered by ascending centroid.

    :raises InvalidK: Unless ``1 <= k <= n``
    """
    p = _as_points(points)
    n = len(p)
    if not 1 <= k <= n:
        raise InvalidK(f"k must be in 1..{n}, got {k}")
    order = np.argsort(p[:, 0], kind="stable")
    picks = np.floor((np.arange(k) + 0.5) / k * n).astype(np.int64)
    centroids = p[order[picks]].copy()

    history = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITERS):
        distances = _sq_distances(p, centroids)
        labels = np.argmin(distances, axis=1)
        history.append(float(distances[np.arange(n), labels].sum()))

        updated = centroids.copy()
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                updated[j] = p[labels == j].mean(axis=0)
        for j in np.flatnonzero(counts == 0):
            own = distances[np.arange(n), labels]
            far = int(np.argmax(own))
            updated[j] = p[far]
            labels[far] = j
            distances[:, j] = _sq_distances(p, updated[j : j + 1])[:, 0]
        shift = float(np.sqrt(_sq_distances(updated, centroids).diagonal().max()))
        centroids = updated
        if shift < KMEANS_TOLERANCE:
            break

    distances = _sq_distances(p, centroids)
    labels = np.argmin(distances, axis=1)
    final = float(distances[np.arange(n), labels].sum())
    if final <= history[-1]:
        history.append(final)
    return Partition(_relabel_by_centroid(labels, centroids), history)


def default_eps(points) -> float:
    p = _as_points(points)
    return DEFAULT_EPS_FRAC * float(p[:, 0].max() - p[:, 0].min()) if len(p) else 0.0


def dbscan(points, eps: Optional[float] = None, min_pts: int = DEFAULT_MIN_PTS) -> Partition:
    """
    Density clustering scanning points in index order.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Noise is labelled -1.

    :param eps: Neighbourhood radius (default 5% of the first coordinate's range)
    :raises InvalidEps: If ``eps`` is not positive
    """
    p = _as_points(points)
    n = len(p)
    if eps is None:
        eps = default_eps(p)
    if not eps > 0:
        raise InvalidEps(f"eps must be > 0, got {eps}")
    eps_sq = eps * eps

    def neighbours(i: int) -> np.ndarray:
        d = p - p[i]
        return np.flatnonzero(np.einsum("ij,ij->i", d, d) <= eps_sq)

    counts = np.zeros(n, dtype=np.int64)
    for start in range(0, n, DISTANCE_CHUNK):
        block = _sq_distances(p[start : start + DISTANCE_CHUNK], p)
        counts[start : start + DISTANCE_CHUNK] = np.count_nonzero(block <= eps_sq, axis=1)
    core = counts >= min_pts

    unvisited = -2
    labels = np.full(n, unvisited, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != unvisited:
            continue
        if not core[i]:
            labels[i] = -1
            continue
        labels[i] = cluster
        queue = [i]
        while queue:
            q = queue.pop(0)
            for j in neighbours(q).tolist():
                if labels[j] == unvisited or labels[j] == -1:
                    if labels[j] == unvisited and core[j]:
                        queue.append(j)
                    labels[j] = cluster
        cluster += 1
    logging.debug(f"dbscan eps={eps:g}: {cluster} clusters, {int(np.count_nonzero(labels < 0))} noise")
    return Partition(labels)


@dataclass
class PartitionComparison:
    a_labels: List[int]
    b_labels: List[int]
    # matrix[i][j] = points labelled a_labels[i] in a and b_labels[j] in b
    matrix: np.ndarray
    matching: Dict[int, int]
    off_block: int

    def to_dict(self) -> dict:
        return {
            "a_labels": self.a_labels,
            "b_labels": self.b_labels,
            "matrix": self.matrix.tolist(),
            "matching": {str(b): a for b, a in self.matching.items()},
            "off_block": self.off_block,
        }


def compare_partitions(a: Partition, b: Partition) -> PartitionComparison:
    """
    Intersection counts of two labelings and the points outside the matching.

    Labels are matched one-to-one greedily by descending cell count (ties to
    the smaller row, then column). A remaining b-label whose points all
    share one a-label joins that a-label, so a refinement of ``a`` is fully
    matched.

    :raises LengthMismatch: If the partitions cover different point counts
    """
    if len(a) != len(b):
        raise LengthMismatch(f"Partitions have {len(a)} and {len(b)} points")
    a_labels = sorted(int(x) for x in np.unique(a.labels))
    b_labels = sorted(int(x) for x in np.unique(b.labels))
    rows = np.searchsorted(a_labels, a.labels)
    cols = np.searchsorted(b_labels, b.labels)
    matrix = np.zeros((len(a_labels), len(b_labels)), dtype=np.int64)
    np.add.at(matrix, (rows, cols), 1)

    cells = sorted(
        ((int(matrix[i, j]), i, j) for i in range(matrix.shape[0]) for j in range(matrix.shape[1]) if matrix[i, j]),
        key=lambda c: (-c[0], c[1], c[2]),
    )
    used_rows, matching = set(), {}
    for _, i, j in cells:
        if i not in used_rows and j not in matching:
            used_rows.add(i)
            matching[j] = i
    for j in range(len(b_labels)):
        if j not in matching and np.count_nonzero(matrix[:, j]) == 1:
            matching[j] = int(np.flatnonzero(matrix[:, j])[0])

    matched = sum(int(matrix[i, j]) for j, i in matching.items())
    return PartitionComparison(
        a_labels=a_labels,
        b_labels=b_labels,
        matrix=matrix,
        matching={b_labels[j]: a_labels[i] for j, i in matching.items()},
        off_block=len(a) - matched,
    )


def outlier_cluster(partition: Partition, values) -> int:
    """Cluster (noise excluded) with the largest mean of the first coordinate."""
    v = _as_points(values)[:, 0]
    clusters = partition.clusters
    if not clusters:
        raise EmptyInput("Partition has no clusters")
    means = {c: float(v[partition.labels == c].mean()) for c in clusters}
    return max(clusters, key=lambda c: (means[c], -c))


def node_group_intersections(labels: Sequence[int], hostnames: Sequence[str]) -> int:
    """Number of nodes whose ranks fall into more than one group."""
    if len(labels) != len(hostnames):
        raise LengthMismatch(f"{len(labels)} labels for {len(hostnames)} hosts")
    groups: Dict[str, set] = {}
    for label, host in zip(labels, hostnames):
        groups.setdefault(host, set()).add(int(label))
    return sum(1 for g in groups.values() if len(g) > 1)


def kmeans_stability(
    points,
    hostnames: Sequence[str],
    labels: Sequence[int],
    ks: Sequence[int] = (2, 3, 4, 5),
) -> List[Tuple[int, int]]:
    """
    Re-cluster the largest group with K-Means and count split nodes per k.

    :return: (k, node intersections) pairs; k larger than the group is skipped
    """
    p = _as_points(points)
    labels = np.asarray(labels)
    clusters = [c for c in np.unique(labels) if c >= 0]
    if not clusters:
        return []
    majority = max(clusters, key=lambda c: (np.count_nonzero(labels == c), -c))
    members = np.flatnonzero(labels == majority)
    hosts = [hostnames[i] for i in members]
    result = []
    for k in ks:
        if k > len(members):
            logging.warning(f"Skipping k={k}: majority group has {len(members)} points")
            continue
        sub = kmeans(p[members], k)
        result.append((int(k), node_group_intersections(sub.labels, hosts)))
    return result


# ---------------------------------------------------------------------------
# Call chains and node correlation
# ---------------------------------------------------------------------------


def call_chain(cct: CallingContextTree, ctx_id: int) -> List[str]:
    """
    Names from the root down to ``ctx_id``.

    :raises NotFound: If the context is not in the tree
    """
    return cct.path_names(ctx_id)


def rank_hostnames(meta: Metadata, ranks: Sequence[int]) -> List[str]:
    """
    Hostname of each rank (from its first profile).

    :raises NotFound: If a rank has no profile
    """
    hosts = []
    for rank in ranks:
        pids = meta.rank_profiles(int(rank))
        if not pids:
            raise NotFound(f"Rank {rank} has no profile")
        hosts.append(meta.profile(pids[0]).hostname)
    return hosts


def node_correlate(table: Table, meta: Metadata) -> Table:
    """
    Mean of per-rank values per compute node.

    :param table: Columns ``rank`` and ``value``
    :param meta: Metadata providing each rank's hostname
    :return: Table (hostname, value_mean, rank_count) sorted by hostname
    :raises NotFound: If a rank has no profile
    """
    hosts = rank_hostnames(meta, table["rank"].tolist())
    with_host = table.with_column(Column("hostname", np.array(hosts, dtype=object), DType.STR))
    grouped = group_aggregate(with_host, ["hostname"], [("value", "mean"), ("rank", "count")])
    return grouped.select(["hostname", "value_mean", "rank_count"])
