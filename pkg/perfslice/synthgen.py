#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Synthetic databases with known ground truth

Two shapes are generated:

* iterative: every rank runs ``n_iterations`` passes of a loop (the anchor)
  launching a fixed sequence of GPU kernels and data copies
* congestion: many ranks spread over racks of nodes, where the ranks placed on
  a chosen set of outlier nodes spend ``congestion_multiplier`` times longer in
  one MPI call site

All randomness comes from a seeded xorshift64* stream, so identical configs
produce byte-identical databases.
"""

import logging
from dataclasses import dataclass, field, fields
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .errors import InvalidConfig
from .store import (
    RECORD_DTYPE,
    ROOT_PARENT,
    SUMMARY_PROFILE_ID,
    SUMMARY_RANK,
    CallingContextTree,
    CctNode,
    ContextKind,
    DatabaseImage,
    Metadata,
    MetricDesc,
    ProfileDesc,
    Scope,
    TraceData,
    make_events,
)
from .topology import TopoCoord, format_node_name

MASK64 = (1 << 64) - 1
ROOT_NAME = "<program root>"
MAIN_NAME = "main"
GPU_REGION_NAME = "gpu_ompmod_twoei_jk_"

CPUTIME = "cputime"
GPU_KERNEL_METRIC = "gker"
GPU_COPY_METRIC = "gxcopy"


class XorShift64Star:
    """xorshift64* pseudo-random stream"""

    MULTIPLIER = 0x2545F4914F6CDD1D

    def __init__(self, seed: int):
        self.state = (seed & MASK64) or 1

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * self.MULTIPLIER) & MASK64

    def uniform(self) -> float:
        """Float in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def randint(self, n: int) -> int:
        """Integer in [0, n)."""
        return self.next_u64() % n

    def jitter(self, frac: float) -> float:
        """Multiplier in [1 - frac, 1 + frac)."""
        return 1.0 + frac * (2.0 * self.uniform() - 1.0)

    def shuffle(self, items: list) -> list:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


# ---------------------------------------------------------------------------
# Configuration types
# ---------------------------------------------------------------------------


def _build(cls, data: Any, what: str):
    if not isinstance(data, dict):
        raise InvalidConfig(f"{what} must be a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InvalidConfig(f"Unknown {what} field(s): {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise InvalidConfig(f"Invalid {what}: {e}")


@dataclass
class KernelSpec:
    name: str
    mean_time_s: float
    across_rank_spread: List[float] = field(default_factory=list)
    within_rank_jitter_frac: float = 0.0

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        return _build(cls, data, "kernel")


@dataclass
class IterScenarioConfig:
    n_ranks: int
    n_iterations: int
    kernels: List[KernelSpec]
    anchor_name: str = "gamess_scf_loop"
    seed: int = 0
    copies: List[KernelSpec] = field(default_factory=list)
    anchor_overhead_ns: int = 0
    host_gap_ns: int = 0
    ranks_per_node: int = 1
    rack_start: int = 4100
    chassis_per_rack: int = 4
    slots_per_chassis: int = 8

    @classmethod
    def from_dict(cls, data: dict) -> "IterScenarioConfig":
        data = dict(data)
        data.pop("kind", None)
        data["kernels"] = [KernelSpec.from_dict(k) for k in data.get("kernels", [])]
        data["copies"] = [KernelSpec.from_dict(k) for k in data.get("copies", [])]
        cfg = _build(cls, data, "iterative scenario")
        cfg.validate()
        return cfg

    def validate(self) -> None:
        """
        :raises InvalidConfig: If any field is out of range
        """
        if self.n_ranks < 1:
            raise InvalidConfig("n_ranks must be >= 1")
        if self.n_iterations < 1:
            raise InvalidConfig("n_iterations must be >= 1")
        if not self.kernels:
            raise InvalidConfig("At least one kernel is required")
        if self.anchor_overhead_ns < 0 or self.host_gap_ns < 0:
            raise InvalidConfig("Overheads must be >= 0")
        _check_naming(self.ranks_per_node, self.rack_start, self.chassis_per_rack, self.slots_per_chassis)
        names = [k.name for k in self.kernels + self.copies]
        if len(set(names)) != len(names):
            raise InvalidConfig("Kernel and copy names must be unique")
        if self.anchor_name in names or self.anchor_name in (MAIN_NAME, GPU_REGION_NAME):
            raise InvalidConfig(f"Anchor name {self.anchor_name!r} collides with another context")
        for k in self.kernels + self.copies:
            if k.mean_time_s < 0:
                raise InvalidConfig(f"Kernel {k.name}: mean_time_s must be >= 0")
            if not 0 <= k.within_rank_jitter_frac < 0.5:
                raise InvalidConfig(f"Kernel {k.name}: jitter fraction must be in [0, 0.5)")
            if k.across_rank_spread and len(k.across_rank_spread) != self.n_ranks:
                raise InvalidConfig(
                    f"Kernel {k.name}: across_rank_spread needs {self.n_ranks} factors, "
                    f"got {len(k.across_rank_spread)}"
                )
            if any(f <= 0 for f in k.across_rank_spread):
                raise InvalidConfig(f"Kernel {k.name}: spread factors must be > 0")


@dataclass
class CallsiteSpec:
    routine_name: str
    call_chain: List[str] = field(default_factory=list)
    base_time_s: float = 0.0

    @classmethod
    def from_dict(cls, data: dict) -> "CallsiteSpec":
        return _build(cls, data, "call site")


@dataclass
class CongestionScenarioConfig:
    n_nodes: int
    ranks_per_node: int
    outlier_node_count: int
    mpi_callsites: List[CallsiteSpec]
    congestion_multiplier: float
    outlier_racks: List[int] = field(default_factory=list)
    seed: int = 0
    congested_callsite: int = 0
    compute_name: str = "hypre_BoomerAMGRelax"
    compute_time_s: float = 1.0
    noise_frac: float = 0.0
    rack_start: int = 4100
    chassis_per_rack: int = 4
    slots_per_chassis: int = 8

    @classmethod
    def from_dict(cls, data: dict) -> "CongestionScenarioConfig":
        data = dict(data)
        data.pop("kind", None)
        data["mpi_callsites"] = [CallsiteSpec.from_dict(c) for c in data.get("mpi_callsites", [])]
        cfg = _build(cls, data, "congestion scenario")
        cfg.validate()
        return cfg

    @property
    def nodes_per_rack(self) -> int:
        return self.chassis_per_rack * self.slots_per_chassis

    def validate(self) -> None:
        """
        :raises InvalidConfig: If any field is out of range
        """
        if self.n_nodes < 1:
            raise InvalidConfig("n_nodes must be >= 1")
        _check_naming(self.ranks_per_node, self.rack_start, self.chassis_per_rack, self.slots_per_chassis)
        if not 0 <= self.outlier_node_count <= self.n_nodes:
            raise InvalidConfig("outlier_node_count must be in [0, n_nodes]")
        if not self.mpi_callsites:
            raise InvalidConfig("At least one MPI call site is required")
        if not 0 <= self.congested_callsite < len(self.mpi_callsites):
            raise InvalidConfig("congested_callsite must index mpi_callsites")
        if self.congestion_multiplier < 1:
            raise InvalidConfig("congestion_multiplier must be >= 1")
        if not 0 <= self.noise_frac < 0.5:
            raise InvalidConfig("noise_frac must be in [0, 0.5)")
        if self.compute_time_s < 0 or any(c.base_time_s < 0 for c in self.mpi_callsites):
            raise InvalidConfig("Times must be >= 0")
        paths = [tuple(c.call_chain) + (c.routine_name,) for c in self.mpi_callsites]
        if len(set(paths)) != len(paths):
            raise InvalidConfig("Two call sites share the same call chain")

        n_racks = -(-self.n_nodes // self.nodes_per_rack)
        valid_racks = range(self.rack_start, self.rack_start + n_racks)
        if len(set(self.outlier_racks)) != len(self.outlier_racks):
            raise InvalidConfig("outlier_racks has duplicates")
        for rack in self.outlier_racks:
            if rack not in valid_racks:
                raise InvalidConfig(f"Outlier rack {rack} outside the allocation")
        if self.outlier_racks:
            if self.outlier_node_count < len(self.outlier_racks):
                raise InvalidConfig("Fewer outlier nodes than outlier racks")
            for rack, count in zip(self.outlier_racks, _spread_counts(self.outlier_node_count, len(self.outlier_racks))):
                if count > len(_rack_nodes(rack, self)):
                    raise InvalidConfig(f"Rack {rack} cannot hold {count} outlier nodes")


def _check_naming(ranks_per_node: int, rack_start: int, chassis_per_rack: int, slots_per_chassis: int):
    if ranks_per_node < 1:
        raise InvalidConfig("ranks_per_node must be >= 1")
    if rack_start < 0 or chassis_per_rack < 1 or slots_per_chassis < 1:
        raise InvalidConfig("Rack naming parameters must be positive")


@dataclass
class GroundTruth:
    """Quantities the generator injected, for checking analyses against"""

    kind: str
    anchor_ctx: Optional[int] = None
    kernel_ctx: Dict[str, int] = field(default_factory=dict)
    # kernel name -> [rank, iteration] nanoseconds
    kernel_times_ns: Dict[str, np.ndarray] = field(default_factory=dict)
    boundaries_ns: Dict[int, List[int]] = field(default_factory=dict)
    balance_ratios: Dict[str, float] = field(default_factory=dict)
    outlier_nodes: List[str] = field(default_factory=list)
    outlier_racks: List[int] = field(default_factory=list)
    outlier_ranks: List[int] = field(default_factory=list)
    congested_ctx: Optional[int] = None
    callsite_ctx: List[int] = field(default_factory=list)
    # [rank] nanoseconds at the congested call site
    congested_times_ns: Optional[np.ndarray] = None

    def kernel_times_s(self, name: str) -> np.ndarray:
        return self.kernel_times_ns[name] / 1e9

    def to_dict(self) -> dict:
        data: Dict[str, Any] = {"kind": self.kind}
        if self.kind == "iterative":
            data.update(
                {
                    "anchor_ctx": self.anchor_ctx,
                    "kernel_ctx": dict(self.kernel_ctx),
                    "kernel_times_ns": {k: v.tolist() for k, v in self.kernel_times_ns.items()},
                    "boundaries_ns": {str(k): v for k, v in self.boundaries_ns.items()},
                    "balance_ratios": dict(self.balance_ratios),
                }
            )
        else:
            data.update(
                {
                    "congested_ctx": self.congested_ctx,
                    "callsite_ctx": list(self.callsite_ctx),
                    "balance_ratios": dict(self.balance_ratios),
                    "outlier_nodes": list(self.outlier_nodes),
                    "outlier_racks": list(self.outlier_racks),
                    "outlier_ranks": list(self.outlier_ranks),
                }
            )
        return data


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def rank_spread(
    mean_s: float, max_s: float, n_ranks: int, cv_pct: Optional[float] = None
) -> List[float]:
    """
    Per-rank multiplicative factors with a given mean, maximum and optional CV.

    Rank 0 runs at ``max_s``; the other ranks share the remaining time, spread
    symmetrically around their common mean so that the population CV across
    ranks equals ``cv_pct`` when given.

    :param mean_s: Mean time across ranks
    :param max_s: Time of the slowest rank
    :param n_ranks: Number of ranks
    :param cv_pct: Target coefficient of variation in percent
    :return: Factors relative to ``mean_s``
    :raises InvalidConfig: If the targets cannot be met
    """
    if n_ranks < 1 or mean_s <= 0 or max_s < mean_s:
        raise InvalidConfig("Need n_ranks >= 1 and 0 < mean <= max")
    if n_ranks == 1:
        if max_s != mean_s:
            raise InvalidConfig("A single rank cannot have max != mean")
        return [1.0]
    rest = n_ranks - 1
    rest_mean = (n_ranks * mean_s - max_s) / rest
    offsets = np.arange(rest, dtype=float) - (rest - 1) / 2.0
    step = 0.0
    if cv_pct is not None:
        target = (cv_pct / 100.0 * mean_s) ** 2 * n_ranks
        fixed = (max_s - mean_s) ** 2 + rest * (rest_mean - mean_s) ** 2
        spread = target - fixed
        if spread < 0 or not offsets.any():
            raise InvalidConfig(f"CV {cv_pct}% unreachable with mean {mean_s} and max {max_s}")
        step = float(np.sqrt(spread / float(np.sum(offsets ** 2))))
    times = [max_s] + (rest_mean + step * offsets).tolist()
    if min(times) <= 0 or max(times[1:], default=0.0) > max_s:
        raise InvalidConfig(f"CV {cv_pct}% unreachable with mean {mean_s} and max {max_s}")
    return [t / mean_s for t in times]


def _node_coord(index: int, rack_start: int, chassis_per_rack: int, slots_per_chassis: int) -> TopoCoord:
    per_rack = chassis_per_rack * slots_per_chassis
    return TopoCoord(
        rack=rack_start + index // per_rack,
        chassis=(index // slots_per_chassis) % chassis_per_rack,
        slot=index % slots_per_chassis,
    )


def _rack_nodes(rack: int, cfg: CongestionScenarioConfig) -> List[int]:
    first = (rack - cfg.rack_start) * cfg.nodes_per_rack
    return list(range(first, min(first + cfg.nodes_per_rack, cfg.n_nodes)))


def _spread_counts(total: int, buckets: int) -> List[int]:
    base, extra = divmod(total, buckets)
    return [base + (1 if i < extra else 0) for i in range(buckets)]


def _profiles(n_ranks: int, ranks_per_node: int, coord_of) -> List[ProfileDesc]:
    profiles = [ProfileDesc(SUMMARY_PROFILE_ID, SUMMARY_RANK, 0, "", 0)]
    for rank in range(n_ranks):
        node = rank // ranks_per_node
        profiles.append(
            ProfileDesc(
                profile_id=rank + 1,
                rank=rank,
                thread=0,
                hostname=format_node_name(coord_of(node)),
                posix_node_id=0x10000 + node,
            )
        )
    return profiles


def _record_bodies(
    cct: CallingContextTree, columns: Sequence[Tuple[int, int, np.ndarray]]
) -> Dict[int, np.ndarray]:
    """
    Build sorted record bodies for the summary and every rank.

    :param columns: (inclusive metric id, exclusive metric id, exclusive ns
        as a [rank, ctx] matrix) per metric name
    :return: Bodies keyed by profile id; profile 0 holds the cross-rank sum
    """
    by_metric: Dict[int, np.ndarray] = {}
    for incl_id, excl_id, exclusive in columns:
        rows = np.vstack([exclusive.sum(axis=0), exclusive])
        by_metric[incl_id] = cct.inclusive_from_exclusive(rows.T).T
        by_metric[excl_id] = rows
    metric_ids = sorted(by_metric)
    ids = np.asarray(metric_ids)
    cube = np.stack([by_metric[m] for m in metric_ids], axis=2)

    bodies = {}
    for pid, matrix in enumerate(cube):
        ctx, col = np.nonzero(matrix)
        records = np.zeros(len(ctx), dtype=RECORD_DTYPE)
        records["ctx_id"] = ctx
        records["metric_id"] = ids[col]
        records["value"] = matrix[ctx, col] / 1e9
        bodies[pid] = records
    return bodies


def _metric_pairs(names: Sequence[str]) -> List[MetricDesc]:
    metrics = []
    for i, name in enumerate(names):
        metrics.append(MetricDesc(2 * i, name, Scope.INCLUSIVE))
        metrics.append(MetricDesc(2 * i + 1, name, Scope.EXCLUSIVE))
    return metrics


class _TreeBuilder:
    def __init__(self):
        self.nodes = [CctNode(0, ROOT_PARENT, ContextKind.FUNCTION, ROOT_NAME)]
        self._index: Dict[Tuple[int, str], int] = {}

    def child(self, parent: int, name: str, kind: ContextKind) -> int:
        key = (parent, name)
        if key not in self._index:
            ctx = len(self.nodes)
            self.nodes.append(CctNode(ctx, parent, kind, name))
            self._index[key] = ctx
        return self._index[key]

    def build(self) -> CallingContextTree:
        return CallingContextTree(self.nodes)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def generate_cct(
    depth: int, fanout: int, name_scheme: str = "f{depth}_{index}", seed: int = 0
) -> CallingContextTree:
    """
    Generate a complete tree of ``depth`` levels in breadth-first id order.

    Node kinds below the root are drawn from the seeded stream.

    :param depth: Number of levels, root included (>= 1)
    :param fanout: Children per internal node
    :param name_scheme: ``str.format`` pattern with ``depth``, ``index`` and
        ``parent`` fields
    :param seed: Stream seed
    :return: Tree with ``sum(fanout ** d for d in range(depth))`` nodes
    """
    if depth < 1:
        raise InvalidConfig("depth must be >= 1")
    if fanout < 0:
        raise InvalidConfig("fanout must be >= 0")
    rng = XorShift64Star(seed)
    kinds = (ContextKind.FUNCTION, ContextKind.LOOP, ContextKind.LINE)
    nodes = [CctNode(0, ROOT_PARENT, ContextKind.FUNCTION, ROOT_NAME)]
    frontier = [0]
    for d in range(1, depth):
        next_frontier = []
        index = 0
        for parent in frontier:
            for _ in range(fanout):
                ctx = len(nodes)
                name = name_scheme.format(depth=d, index=index, parent=parent)
                nodes.append(CctNode(ctx, parent, kinds[rng.randint(len(kinds))], name))
                next_frontier.append(ctx)
                index += 1
        frontier = next_frontier
    return CallingContextTree(nodes)


def generate_iterative_scenario(cfg: IterScenarioConfig) -> Tuple[DatabaseImage, GroundTruth]:
    """
    Generate the iterative GPU workload.

    Per rank and iteration the trace holds one event entering the anchor loop,
    one event per kernel and per copy, and one event returning to ``main``.

    :param cfg: Scenario configuration
    :return: Database image and ground truth
    :raises InvalidConfig: If the configuration is invalid
    """
    cfg.validate()
    rng = XorShift64Star(cfg.seed)

    tree = _TreeBuilder()
    main = tree.child(0, MAIN_NAME, ContextKind.FUNCTION)
    anchor = tree.child(main, cfg.anchor_name, ContextKind.LOOP)
    region = tree.child(anchor, GPU_REGION_NAME, ContextKind.FUNCTION)
    kernel_ctx = {k.name: tree.child(region, k.name, ContextKind.GPU_KERNEL) for k in cfg.kernels}
    copy_ctx = {c.name: tree.child(region, c.name, ContextKind.GPU_KERNEL) for c in cfg.copies}
    cct = tree.build()
    n_ctx = len(cct)

    specs = cfg.kernels + cfg.copies
    times = {s.name: np.zeros((cfg.n_ranks, cfg.n_iterations), dtype=np.int64) for s in specs}
    for rank in range(cfg.n_ranks):
        for it in range(cfg.n_iterations):
            for s in specs:
                factor = s.across_rank_spread[rank] if s.across_rank_spread else 1.0
                seconds = s.mean_time_s * factor * rng.jitter(s.within_rank_jitter_frac)
                times[s.name][rank, it] = int(round(seconds * 1e9))

    metrics = _metric_pairs([CPUTIME, GPU_KERNEL_METRIC, GPU_COPY_METRIC])
    coord_of = partial(
        _node_coord,
        rack_start=cfg.rack_start,
        chassis_per_rack=cfg.chassis_per_rack,
        slots_per_chassis=cfg.slots_per_chassis,
    )
    profiles = _profiles(cfg.n_ranks, cfg.ranks_per_node, coord_of)

    traces: Dict[int, TraceData] = {}
    boundaries: Dict[int, List[int]] = {}
    cpu_all = np.zeros((cfg.n_ranks, n_ctx), dtype=np.int64)
    gker_all = np.zeros((cfg.n_ranks, n_ctx), dtype=np.int64)
    gxcopy_all = np.zeros((cfg.n_ranks, n_ctx), dtype=np.int64)

    for rank in range(cfg.n_ranks):
        cpu, gker, gxcopy = cpu_all[rank], gker_all[rank], gxcopy_all[rank]
        events = []
        starts = []
        t = 0
        for it in range(cfg.n_iterations):
            starts.append(t)
            events.append((t, anchor))
            cpu[anchor] += cfg.anchor_overhead_ns
            t += cfg.anchor_overhead_ns
            for s in specs:
                ctx = kernel_ctx.get(s.name, copy_ctx.get(s.name))
                duration = int(times[s.name][rank, it])
                events.append((t, ctx))
                cpu[ctx] += duration
                if s.name in kernel_ctx:
                    gker[ctx] += duration
                else:
                    gxcopy[ctx] += duration
                t += duration
            events.append((t, main))
            cpu[main] += cfg.host_gap_ns
            t += cfg.host_gap_ns

        pid = rank + 1
        traces[pid] = TraceData(events=make_events(events), t_begin_ns=0, t_end_ns=t)
        boundaries[pid] = starts

    records = _record_bodies(cct, [(0, 1, cpu_all), (2, 3, gker_all), (4, 5, gxcopy_all)])

    ratios = {}
    for name, matrix in times.items():
        per_rank = matrix.sum(axis=1).astype(float)
        ratios[name] = 1.0 if per_rank.max() == 0 else float(per_rank.mean() / per_rank.max())

    image = DatabaseImage(
        meta=Metadata(metrics=metrics, profiles=profiles, cct=cct), records=records, traces=traces
    )
    truth = GroundTruth(
        kind="iterative",
        anchor_ctx=anchor,
        kernel_ctx={**kernel_ctx, **copy_ctx},
        kernel_times_ns=times,
        boundaries_ns=boundaries,
        balance_ratios=ratios,
    )
    logging.debug(
        f"Generated iterative scenario: {cfg.n_ranks} ranks, {cfg.n_iterations} iterations, {n_ctx} contexts"
    )
    return image, truth


def _pick_outlier_nodes(cfg: CongestionScenarioConfig, rng: XorShift64Star) -> List[int]:
    if cfg.outlier_racks:
        chosen = []
        counts = _spread_counts(cfg.outlier_node_count, len(cfg.outlier_racks))
        for rack, count in zip(cfg.outlier_racks, counts):
            chosen.extend(_rack_nodes(rack, cfg)[:count])
        return sorted(chosen)
    order = rng.shuffle(list(range(cfg.n_nodes)))
    return sorted(order[: cfg.outlier_node_count])


def generate_congestion_scenario(
    cfg: CongestionScenarioConfig,
) -> Tuple[DatabaseImage, GroundTruth]:
    """
    Generate the multi-rack allocation with one congested MPI call site.

    Every rank runs one compute segment followed by one segment per call site.
    Ranks on outlier nodes spend ``congestion_multiplier`` times the base time
    in the congested call site.

    :param cfg: Scenario configuration
    :return: Database image and ground truth
    :raises InvalidConfig: If the configuration is invalid
    """
    cfg.validate()
    rng = XorShift64Star(cfg.seed)

    tree = _TreeBuilder()
    main = tree.child(0, MAIN_NAME, ContextKind.FUNCTION)
    compute = tree.child(main, cfg.compute_name, ContextKind.FUNCTION)
    sites = []
    for c in cfg.mpi_callsites:
        parent = main
        for name in c.call_chain:
            parent = tree.child(parent, name, ContextKind.FUNCTION)
        sites.append(tree.child(parent, c.routine_name, ContextKind.FUNCTION))
    cct = tree.build()
    n_ctx = len(cct)

    outlier_nodes = _pick_outlier_nodes(cfg, rng)
    outlier_set = set(outlier_nodes)
    n_ranks = cfg.n_nodes * cfg.ranks_per_node
    coord_of = partial(
        _node_coord,
        rack_start=cfg.rack_start,
        chassis_per_rack=cfg.chassis_per_rack,
        slots_per_chassis=cfg.slots_per_chassis,
    )
    profiles = _profiles(n_ranks, cfg.ranks_per_node, coord_of)
    metrics = _metric_pairs([CPUTIME])

    traces: Dict[int, TraceData] = {}
    exclusive_all = np.zeros((n_ranks, n_ctx), dtype=np.int64)
    site_times = np.zeros((n_ranks, len(sites)), dtype=np.int64)

    for rank in range(n_ranks):
        congested = rank // cfg.ranks_per_node in outlier_set
        exclusive = exclusive_all[rank]
        events = []
        t = 0
        duration = int(round(cfg.compute_time_s * rng.jitter(cfg.noise_frac) * 1e9))
        events.append((t, compute))
        exclusive[compute] += duration
        t += duration
        for i, (c, ctx) in enumerate(zip(cfg.mpi_callsites, sites)):
            seconds = c.base_time_s * rng.jitter(cfg.noise_frac)
            if congested and i == cfg.congested_callsite:
                seconds *= cfg.congestion_multiplier
            duration = int(round(seconds * 1e9))
            site_times[rank, i] = duration
            events.append((t, ctx))
            exclusive[ctx] += duration
            t += duration

        pid = rank + 1
        traces[pid] = TraceData(events=make_events(events), t_begin_ns=0, t_end_ns=t)

    records = _record_bodies(cct, [(0, 1, exclusive_all)])

    ratios = {}
    for i, c in enumerate(cfg.mpi_callsites):
        column = site_times[:, i].astype(float)
        key = "/".join(c.call_chain + [c.routine_name])
        ratios[key] = 1.0 if column.max() == 0 else float(column.mean() / column.max())

    outlier_hosts = sorted(format_node_name(coord_of(n)) for n in outlier_nodes)
    image = DatabaseImage(
        meta=Metadata(metrics=metrics, profiles=profiles, cct=cct), records=records, traces=traces
    )
    truth = GroundTruth(
        kind="congestion",
        outlier_nodes=outlier_hosts,
        outlier_racks=sorted({coord_of(n).rack for n in outlier_nodes}),
        outlier_ranks=[r for r in range(n_ranks) if r // cfg.ranks_per_node in outlier_set],
        congested_ctx=sites[cfg.congested_callsite],
        callsite_ctx=sites,
        balance_ratios=ratios,
        congested_times_ns=site_times[:, cfg.congested_callsite].copy(),
    )
    logging.debug(
        f"Generated congestion scenario: {cfg.n_nodes} nodes, {n_ranks} ranks, "
        f"{len(outlier_nodes)} outlier nodes in {len(truth.outlier_racks)} racks"
    )
    return image, truth


ScenarioConfig = Union[IterScenarioConfig, CongestionScenarioConfig]


def scenario_from_dict(data: Any) -> ScenarioConfig:
    """
    Build a scenario config from a mapping with a ``kind`` key.

    :raises InvalidConfig: If the kind is unknown or a field is invalid
    """
    if not isinstance(data, dict):
        raise InvalidConfig("Scenario file must contain a mapping")
    kind = data.get("kind")
    try:
        if kind == "iterative":
            return IterScenarioConfig.from_dict(data)
        if kind == "congestion":
            return CongestionScenarioConfig.from_dict(data)
    except TypeError as e:
        raise InvalidConfig(f"Invalid {kind} scenario: {e}")
    raise InvalidConfig(f"Unknown scenario kind: {kind!r} (expected 'iterative' or 'congestion')")


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    """
    Load a YAML or JSON scenario file.

    :raises InvalidConfig: If the file cannot be read or parsed
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise InvalidConfig(f"Cannot read scenario file {path}: {e}")
    except yaml.YAMLError as e:
        raise InvalidConfig(f"Malformed scenario file {path}: {e}")
    return scenario_from_dict(data)


def generate_scenario(cfg: ScenarioConfig) -> Tuple[DatabaseImage, GroundTruth]:
    if isinstance(cfg, IterScenarioConfig):
        return generate_iterative_scenario(cfg)
    return generate_congestion_scenario(cfg)
