#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Sparse performance database: binary format, writer and random-access reader

A database is a directory with three little-endian files:

* ``meta.bin``   metric, profile and calling-context descriptions
* ``profile.db`` per-profile bodies of (ctx_id, metric_id, value) records,
  sorted by (ctx_id, metric_id) and indexed by profile id
* ``trace.db``   per-profile bodies of (timestamp_ns, ctx_id) events,
  sorted by timestamp and indexed by profile id

Opening a database parses ``meta.bin`` and the two index blocks only; record
and event bodies are reached through memory maps and binary search.
"""

import bisect
import logging
import mmap
import struct
import threading
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import FormatError, InvalidImage, IoError, NotFound

META_MAGIC = b"HPAN"
PROFILE_MAGIC = b"HPPR"
TRACE_MAGIC = b"HPTR"
FORMAT_VERSION = 1

META_FILE = "meta.bin"
PROFILE_FILE = "profile.db"
TRACE_FILE = "trace.db"

ROOT_PARENT = 0xFFFFFFFF
SUMMARY_PROFILE_ID = 0
SUMMARY_RANK = -1

RECORD_DTYPE = np.dtype([("ctx_id", "<u4"), ("metric_id", "<u2"), ("value", "<f8")])
EVENT_DTYPE = np.dtype([("timestamp_ns", "<u8"), ("ctx_id", "<u4")])
PROFILE_INDEX_DTYPE = np.dtype(
    [("profile_id", "<u4"), ("offset", "<u8"), ("record_count", "<u8")]
)
TRACE_INDEX_DTYPE = np.dtype(
    [
        ("profile_id", "<u4"),
        ("offset", "<u8"),
        ("event_count", "<u8"),
        ("t_begin_ns", "<u8"),
        ("t_end_ns", "<u8"),
    ]
)
FILE_HEADER = struct.Struct("<4sII")


class Scope(IntEnum):
    INCLUSIVE = 0
    EXCLUSIVE = 1

    @property
    def short(self) -> str:
        return "i" if self is Scope.INCLUSIVE else "e"

    @classmethod
    def from_short(cls, text: str) -> "Scope":
        return cls.INCLUSIVE if text == "i" else cls.EXCLUSIVE


class ContextKind(IntEnum):
    FUNCTION = 0
    LOOP = 1
    LINE = 2
    GPU_KERNEL = 3
    GPU_CONTEXT = 4


@dataclass(frozen=True)
class MetricDesc:
    metric_id: int
    name: str
    scope: Scope
    unit: str = "s"


@dataclass(frozen=True)
class ProfileDesc:
    profile_id: int
    rank: int
    thread: int
    hostname: str
    posix_node_id: int


@dataclass(frozen=True)
class CctNode:
    ctx_id: int
    parent_id: int
    kind: ContextKind
    name: str

    @property
    def is_root(self) -> bool:
        return self.parent_id == ROOT_PARENT


class ProfileRecord(NamedTuple):
    ctx_id: int
    metric_id: int
    value: float


class TraceEvent(NamedTuple):
    timestamp_ns: int
    ctx_id: int


class CallingContextTree:
    """Id-indexed tree of calling contexts with parent links.

    Node ids are dense and topologically ordered (every parent id is smaller
    than its child's id), so node 0 is the single root.
    """

    def __init__(self, nodes: Sequence[CctNode]):
        """
        :param nodes: Nodes in id order
        :raises InvalidImage: If ids are not dense, parents are not
            topologically ordered or the tree has more than one root
        """
        if not nodes:
            raise InvalidImage("Calling context tree needs a root node")
        self.nodes: List[CctNode] = list(nodes)
        n = len(self.nodes)
        self.parents = np.full(n, -1, dtype=np.int64)
        self.depths = np.zeros(n, dtype=np.int64)
        self.kinds = np.zeros(n, dtype=np.int64)
        self.names: List[str] = []

        for position, node in enumerate(self.nodes):
            if node.ctx_id != position:
                raise InvalidImage(
                    f"Context ids must be dense and ordered: found {node.ctx_id} at position {position}"
                )
            if node.is_root:
                if position != 0:
                    raise InvalidImage(f"Context {node.ctx_id} is a second root")
            else:
                if position == 0:
                    raise InvalidImage("Context 0 must be the root")
                if not 0 <= node.parent_id < node.ctx_id:
                    raise InvalidImage(
                        f"Context {node.ctx_id} has parent {node.parent_id} out of topological order"
                    )
                self.parents[position] = node.parent_id
                self.depths[position] = self.depths[node.parent_id] + 1
            self.kinds[position] = int(node.kind)
            self.names.append(node.name)

        max_depth = int(self.depths.max())
        order = np.argsort(self.depths, kind="stable")
        bounds = np.searchsorted(self.depths[order], np.arange(max_depth + 2))
        # ids grouped by depth, shallowest first
        self.levels: List[np.ndarray] = [
            order[bounds[d] : bounds[d + 1]] for d in range(max_depth + 1)
        ]
        self._children: Optional[List[List[int]]] = None
        self._subtree_cache: Dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def __getitem__(self, ctx_id: int) -> CctNode:
        if not 0 <= ctx_id < len(self.nodes):
            raise NotFound(f"Context {ctx_id} not in calling context tree")
        return self.nodes[ctx_id]

    def __contains__(self, ctx_id: object) -> bool:
        return isinstance(ctx_id, (int, np.integer)) and 0 <= ctx_id < len(self.nodes)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CallingContextTree) and self.nodes == other.nodes

    @property
    def root_id(self) -> int:
        return 0

    def children(self, ctx_id: int) -> List[int]:
        if self._children is None:
            children: List[List[int]] = [[] for _ in self.nodes]
            for node in self.nodes[1:]:
                children[node.parent_id].append(node.ctx_id)
            self._children = children
        self[ctx_id]
        return self._children[ctx_id]

    def ancestors(self, ctx_id: int) -> List[int]:
        """Return ``ctx_id`` followed by its ancestors up to the root."""
        self[ctx_id]
        chain = [int(ctx_id)]
        parent = self.parents[ctx_id]
        while parent >= 0:
            chain.append(int(parent))
            parent = self.parents[parent]
        return chain

    def path_names(self, ctx_id: int) -> List[str]:
        """Return the names on the path root -> ``ctx_id``."""
        return [self.names[c] for c in reversed(self.ancestors(ctx_id))]

    def subtree_mask(self, ctx_id: int) -> np.ndarray:
        """Boolean mask over context ids, True for ``ctx_id`` and its descendants."""
        cached = self._subtree_cache.get(ctx_id)
        if cached is not None:
            return cached
        self[ctx_id]
        mask = np.zeros(len(self.nodes), dtype=bool)
        mask[ctx_id] = True
        for level in self.levels[int(self.depths[ctx_id]) + 1 :]:
            mask[level] = mask[self.parents[level]]
        mask.flags.writeable = False
        self._subtree_cache[ctx_id] = mask
        return mask

    def find(self, name: str) -> List[int]:
        return [node.ctx_id for node in self.nodes if node.name == name]

    def inclusive_from_exclusive(self, exclusive: np.ndarray) -> np.ndarray:
        """
        Propagate exclusive costs to every ancestor.

        :param exclusive: Exclusive cost indexed by ctx_id along the first axis
        :return: Inclusive cost of the same shape and dtype; exact for integers
        """
        inclusive = np.array(exclusive, copy=True)
        for level in reversed(self.levels[1:]):
            np.add.at(inclusive, self.parents[level], inclusive[level])
        return inclusive


@dataclass
class Metadata:
    """Small metadata parsed in full when a database is opened"""

    metrics: List[MetricDesc]
    profiles: List[ProfileDesc]
    cct: CallingContextTree

    def __post_init__(self):
        self._metric_by_id = {m.metric_id: m for m in self.metrics}
        self._metric_by_key = {(m.name, m.scope): m for m in self.metrics}
        self._profile_by_id = {p.profile_id: p for p in self.profiles}
        self._profiles_by_rank: Dict[int, List[int]] = {}
        for p in sorted(self.profiles, key=lambda p: p.profile_id):
            self._profiles_by_rank.setdefault(p.rank, []).append(p.profile_id)

    def metric(self, metric_id: int) -> MetricDesc:
        try:
            return self._metric_by_id[metric_id]
        except KeyError:
            raise NotFound(f"Metric {metric_id} not described in metadata")

    def find_metric(self, name: str, scope: Scope) -> Optional[MetricDesc]:
        return self._metric_by_key.get((name, scope))

    def metric_names(self) -> List[str]:
        return sorted({m.name for m in self.metrics})

    def profile(self, profile_id: int) -> ProfileDesc:
        try:
            return self._profile_by_id[profile_id]
        except KeyError:
            raise NotFound(f"Profile {profile_id} not described in metadata")

    def has_profile(self, profile_id: int) -> bool:
        return profile_id in self._profile_by_id

    @property
    def has_summary(self) -> bool:
        return SUMMARY_PROFILE_ID in self._profile_by_id

    def ranks(self) -> List[int]:
        return sorted(r for r in self._profiles_by_rank if r != SUMMARY_RANK)

    def rank_profiles(self, rank: int) -> List[int]:
        return list(self._profiles_by_rank.get(rank, []))

    def rank_profile_ids(self) -> List[int]:
        """Ids of every non-summary profile, ascending."""
        return sorted(
            p.profile_id for p in self.profiles if p.profile_id != SUMMARY_PROFILE_ID
        )

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Metadata)
            and self.metrics == other.metrics
            and self.profiles == other.profiles
            and self.cct == other.cct
        )


@dataclass
class TraceData:
    """One execution trace: events sorted by time and the closing timestamp"""

    events: np.ndarray
    t_begin_ns: int
    t_end_ns: int

    @property
    def timestamps(self) -> np.ndarray:
        return self.events["timestamp_ns"].astype(np.int64)

    @property
    def ctx_ids(self) -> np.ndarray:
        return self.events["ctx_id"].astype(np.int64)

    def __len__(self) -> int:
        return len(self.events)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, TraceData)
            and self.t_begin_ns == other.t_begin_ns
            and self.t_end_ns == other.t_end_ns
            and np.array_equal(self.events, other.events)
        )


def make_records(rows: Iterable[Tuple[int, int, float]]) -> np.ndarray:
    """Build a packed record array from (ctx_id, metric_id, value) tuples."""
    return np.array([tuple(r) for r in rows], dtype=RECORD_DTYPE)


def make_events(rows: Iterable[Tuple[int, int]]) -> np.ndarray:
    """Build a packed event array from (timestamp_ns, ctx_id) tuples."""
    return np.array([tuple(r) for r in rows], dtype=EVENT_DTYPE)


def record_keys(records: np.ndarray) -> np.ndarray:
    """Composite (ctx_id, metric_id) sort key of a record array."""
    return (records["ctx_id"].astype(np.int64) << 16) | records["metric_id"].astype(
        np.int64
    )


@dataclass
class DatabaseImage:
    """In-memory logical content of a database"""

    meta: Metadata
    records: Dict[int, np.ndarray] = field(default_factory=dict)
    traces: Dict[int, TraceData] = field(default_factory=dict)

    def profile_records(self, profile_id: int) -> np.ndarray:
        return self.records.get(profile_id, np.zeros(0, dtype=RECORD_DTYPE))

    def equals(self, other: "DatabaseImage") -> bool:
        """Logical equality: same metadata, same records, same traces."""
        if self.meta != other.meta:
            return False
        for p in self.meta.profiles:
            if not np.array_equal(
                self.profile_records(p.profile_id), other.profile_records(p.profile_id)
            ):
                return False
        if sorted(self.traces) != sorted(other.traces):
            return False
        return all(self.traces[k] == other.traces[k] for k in self.traces)

    @classmethod
    def from_handle(cls, h: "DbHandle") -> "DatabaseImage":
        """Read the full logical content of an open database."""
        records = {pid: h.read_profile_array(pid) for pid in h.profile_ids}
        traces = {pid: h.read_trace(pid) for pid in h.trace_ids}
        return cls(meta=h.meta, records=records, traces=traces)


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


def _check_image(image: DatabaseImage) -> None:
    meta = image.meta
    seen_metric_keys = set()
    seen_metric_ids = set()
    for m in meta.metrics:
        if m.metric_id in seen_metric_ids:
            raise InvalidImage(f"Duplicate metric id {m.metric_id}")
        if (m.name, m.scope) in seen_metric_keys:
            raise InvalidImage(f"Duplicate metric {m.name} ({m.scope.short})")
        if not 0 <= m.metric_id <= 0xFFFF:
            raise InvalidImage(f"Metric id {m.metric_id} does not fit 16 bits")
        seen_metric_ids.add(m.metric_id)
        seen_metric_keys.add((m.name, m.scope))

    seen_profiles = set()
    for p in meta.profiles:
        if p.profile_id in seen_profiles:
            raise InvalidImage(f"Duplicate profile id {p.profile_id}")
        seen_profiles.add(p.profile_id)
        if p.profile_id == SUMMARY_PROFILE_ID and p.rank != SUMMARY_RANK:
            raise InvalidImage("Summary profile 0 must have rank -1")
        if p.profile_id != SUMMARY_PROFILE_ID and not p.hostname:
            raise InvalidImage(f"Profile {p.profile_id} has an empty hostname")

    n_ctx = len(meta.cct)
    for pid, records in image.records.items():
        if pid not in seen_profiles:
            raise InvalidImage(f"Records for undescribed profile {pid}")
        if records.dtype != RECORD_DTYPE:
            raise InvalidImage(f"Profile {pid} records have dtype {records.dtype}")
        if len(records) == 0:
            continue
        keys = record_keys(records)
        if np.any(np.diff(keys) <= 0):
            bad = int(np.flatnonzero(np.diff(keys) <= 0)[0]) + 1
            raise InvalidImage(
                f"Profile {pid} records not strictly sorted by (ctx_id, metric_id) at record {bad}"
            )
        if int(records["ctx_id"].max()) >= n_ctx:
            raise InvalidImage(f"Profile {pid} references an unknown context")
        if not set(np.unique(records["metric_id"]).tolist()) <= seen_metric_ids:
            raise InvalidImage(f"Profile {pid} references an unknown metric")
        values = records["value"]
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InvalidImage(f"Profile {pid} has negative or non-finite values")

    for pid, trace in image.traces.items():
        if pid not in seen_profiles:
            raise InvalidImage(f"Trace for undescribed profile {pid}")
        if trace.events.dtype != EVENT_DTYPE:
            raise InvalidImage(f"Trace {pid} events have dtype {trace.events.dtype}")
        if trace.t_begin_ns > trace.t_end_ns:
            raise InvalidImage(f"Trace {pid} begins after it ends")
        if len(trace.events) == 0:
            continue
        ts = trace.events["timestamp_ns"]
        if np.any(ts[1:] < ts[:-1]):
            raise InvalidImage(f"Trace {pid} timestamps decrease")
        if int(ts[0]) < trace.t_begin_ns or int(ts[-1]) > trace.t_end_ns:
            raise InvalidImage(f"Trace {pid} events outside [t_begin, t_end]")
        if int(trace.events["ctx_id"].max()) >= n_ctx:
            raise InvalidImage(f"Trace {pid} references an unknown context")


def _pack_str(buf: bytearray, text: str) -> None:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise InvalidImage(f"String too long for the format: {text[:32]}...")
    buf += struct.pack("<H", len(raw))
    buf += raw


def _encode_meta(meta: Metadata) -> bytes:
    buf = bytearray()
    buf += META_MAGIC
    buf += struct.pack("<I", FORMAT_VERSION)
    buf += struct.pack("<I", len(meta.metrics))
    for m in meta.metrics:
        buf += struct.pack("<IB", m.metric_id, int(m.scope))
        _pack_str(buf, m.name)
        _pack_str(buf, m.unit)
    buf += struct.pack("<I", len(meta.profiles))
    for p in meta.profiles:
        buf += struct.pack("<Iii", p.profile_id, p.rank, p.thread)
        _pack_str(buf, p.hostname)
        buf += struct.pack("<Q", p.posix_node_id)
    buf += struct.pack("<I", len(meta.cct))
    for node in meta.cct:
        buf += struct.pack("<IIB", node.ctx_id, node.parent_id, int(node.kind))
        _pack_str(buf, node.name)
    return bytes(buf)


def write_database(image: DatabaseImage, path: Union[str, Path]) -> None:
    """
    Write a database image as ``meta.bin``, ``profile.db`` and ``trace.db``.

    :param image: Logical content to write
    :param path: Target directory (created if missing)
    :raises InvalidImage: If the image violates a format invariant
    :raises IoError: If the files cannot be written
    """
    _check_image(image)
    directory = Path(path)

    profile_ids = sorted(p.profile_id for p in image.meta.profiles)
    profile_index = np.zeros(len(profile_ids), dtype=PROFILE_INDEX_DTYPE)
    offset = FILE_HEADER.size + profile_index.nbytes
    bodies = []
    for i, pid in enumerate(profile_ids):
        body = image.profile_records(pid)
        profile_index[i] = (pid, offset, len(body))
        bodies.append(body.tobytes())
        offset += body.nbytes

    trace_ids = sorted(image.traces)
    trace_index = np.zeros(len(trace_ids), dtype=TRACE_INDEX_DTYPE)
    offset = FILE_HEADER.size + trace_index.nbytes
    events = []
    for i, pid in enumerate(trace_ids):
        trace = image.traces[pid]
        trace_index[i] = (pid, offset, len(trace.events), trace.t_begin_ns, trace.t_end_ns)
        events.append(trace.events.tobytes())
        offset += trace.events.nbytes

    try:
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / META_FILE, "wb") as f:
            f.write(_encode_meta(image.meta))
        with open(directory / PROFILE_FILE, "wb") as f:
            f.write(FILE_HEADER.pack(PROFILE_MAGIC, FORMAT_VERSION, len(profile_ids)))
            f.write(profile_index.tobytes())
            for body in bodies:
                f.write(body)
        with open(directory / TRACE_FILE, "wb") as f:
            f.write(FILE_HEADER.pack(TRACE_MAGIC, FORMAT_VERSION, len(trace_ids)))
            f.write(trace_index.tobytes())
            for body in events:
                f.write(body)
    except OSError as e:
        raise IoError(f"Failed to write database to {directory}: {e}") from e

    logging.debug(
        f"Wrote database {directory}: {len(profile_ids)} profiles, {len(trace_ids)} traces, "
        f"{len(image.meta.cct)} contexts"
    )


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------


class _MetaReader:
    def __init__(self, data: bytes, filename: str):
        self.data = data
        self.pos = 0
        self.filename = filename

    def unpack(self, fmt: str) -> tuple:
        try:
            values = struct.unpack_from(fmt, self.data, self.pos)
        except struct.error:
            raise FormatError(f"{self.filename} truncated at byte {self.pos}")
        self.pos += struct.calcsize(fmt)
        return values

    def string(self) -> str:
        (length,) = self.unpack("<H")
        raw = self.data[self.pos : self.pos + length]
        if len(raw) != length:
            raise FormatError(f"{self.filename} truncated at byte {self.pos}")
        self.pos += length
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{self.filename} has invalid UTF-8 at byte {self.pos}")


def _decode_meta(data: bytes, filename: str) -> Metadata:
    reader = _MetaReader(data, filename)
    magic, version = reader.unpack("<4sI")
    if magic != META_MAGIC:
        raise FormatError(f"{filename}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{filename}: unsupported version {version}")

    metrics = []
    (n_metrics,) = reader.unpack("<I")
    for _ in range(n_metrics):
        metric_id, scope = reader.unpack("<IB")
        if scope not in (0, 1):
            raise FormatError(f"{filename}: metric {metric_id} has scope byte {scope}")
        name = reader.string()
        unit = reader.string()
        metrics.append(MetricDesc(metric_id, name, Scope(scope), unit))

    profiles = []
    (n_profiles,) = reader.unpack("<I")
    for _ in range(n_profiles):
        profile_id, rank, thread = reader.unpack("<Iii")
        hostname = reader.string()
        (posix_node_id,) = reader.unpack("<Q")
        profiles.append(ProfileDesc(profile_id, rank, thread, hostname, posix_node_id))

    nodes = []
    (n_ctx,) = reader.unpack("<I")
    for _ in range(n_ctx):
        ctx_id, parent_id, kind = reader.unpack("<IIB")
        try:
            kind = ContextKind(kind)
        except ValueError:
            raise FormatError(f"{filename}: context {ctx_id} has kind byte {kind}")
        nodes.append(CctNode(ctx_id, parent_id, kind, reader.string()))

    try:
        cct = CallingContextTree(nodes)
    except InvalidImage as e:
        raise FormatError(f"{filename}: {e}")
    return Metadata(metrics=metrics, profiles=profiles, cct=cct)


@dataclass
class AccessStats:
    """Counters describing how much of the database a handle has touched"""

    bytes_read: int = 0
    probes: int = 0
    records_read: int = 0
    events_read: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, probes: int = 0, records: int = 0, events: int = 0) -> None:
        with self._lock:
            self.probes += probes
            self.records_read += records
            self.events_read += events

    def snapshot(self) -> Dict[str, int]:
        with self._lock:
            return {
                "bytes_read": self.bytes_read,
                "probes": self.probes,
                "records_read": self.records_read,
                "events_read": self.events_read,
            }


class _ProbeColumn:
    """Sequence view over one column that counts element accesses"""

    def __init__(self, column: np.ndarray):
        self.column = column
        self.probes = 0

    def __len__(self) -> int:
        return len(self.column)

    def __getitem__(self, i: int) -> int:
        self.probes += 1
        return int(self.column[i])


def _map_file(path: Path, magic: bytes, entry_dtype: np.dtype):
    """Map a body file and decode its header and index block."""
    try:
        f = open(path, "rb")
    except OSError as e:
        raise IoError(f"Cannot open {path}: {e}") from e
    try:
        size = path.stat().st_size
        if size < FILE_HEADER.size:
            raise FormatError(f"{path.name}: file shorter than its header")
        mm = mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ)
    except OSError as e:
        f.close()
        raise IoError(f"Cannot map {path}: {e}") from e
    except FormatError:
        f.close()
        raise

    try:
        file_magic, version, count = FILE_HEADER.unpack_from(mm, 0)
        if file_magic != magic:
            raise FormatError(f"{path.name}: bad magic {file_magic!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path.name}: unsupported version {version}")
        index_bytes = count * entry_dtype.itemsize
        if FILE_HEADER.size + index_bytes > size:
            raise FormatError(f"{path.name}: truncated index ({count} entries declared)")
        index = np.frombuffer(mm, dtype=entry_dtype, count=count, offset=FILE_HEADER.size).copy()
    except FormatError:
        mm.close()
        f.close()
        raise
    return f, mm, index, size, FILE_HEADER.size + index_bytes


class DbHandle:
    """Open, read-only view of a database directory.

    Immutable after :func:`open_database` returns; safe to share between
    reader threads.
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.stats = AccessStats()

        meta_path = self.path / META_FILE
        try:
            data = meta_path.read_bytes()
        except OSError as e:
            raise IoError(f"Cannot read {meta_path}: {e}") from e
        self.meta = _decode_meta(data, META_FILE)
        self.stats.bytes_read += len(data)

        self._profile_file, self._profile_mm, self.profile_index, size, touched = _map_file(
            self.path / PROFILE_FILE, PROFILE_MAGIC, PROFILE_INDEX_DTYPE
        )
        self.stats.bytes_read += touched
        ends = self.profile_index["offset"] + self.profile_index["record_count"] * RECORD_DTYPE.itemsize
        if len(ends) and int(ends.max()) > size:
            self.close()
            raise FormatError(f"{PROFILE_FILE}: index points past end of file")

        self._trace_file, self._trace_mm, self.trace_index, size, touched = _map_file(
            self.path / TRACE_FILE, TRACE_MAGIC, TRACE_INDEX_DTYPE
        )
        self.stats.bytes_read += touched
        ends = self.trace_index["offset"] + self.trace_index["event_count"] * EVENT_DTYPE.itemsize
        if len(ends) and int(ends.max()) > size:
            self.close()
            raise FormatError(f"{TRACE_FILE}: index points past end of file")
        if np.any(self.trace_index["t_begin_ns"] > self.trace_index["t_end_ns"]):
            self.close()
            raise FormatError(f"{TRACE_FILE}: trace begins after it ends")

        self._profile_slot = {
            int(pid): i for i, pid in enumerate(self.profile_index["profile_id"])
        }
        self._trace_slot = {int(pid): i for i, pid in enumerate(self.trace_index["profile_id"])}
        logging.debug(
            f"Opened {self.path}: {len(self._profile_slot)} profiles, "
            f"{len(self._trace_slot)} traces, {self.stats.bytes_read} bytes of metadata"
        )

    def close(self) -> None:
        for name in ("_profile_mm", "_profile_file", "_trace_mm", "_trace_file"):
            resource = getattr(self, name, None)
            if resource is not None:
                resource.close()
                setattr(self, name, None)

    def __enter__(self) -> "DbHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def n_profiles(self) -> int:
        return len(self.profile_index)

    @property
    def profile_ids(self) -> List[int]:
        return sorted(self._profile_slot)

    @property
    def trace_ids(self) -> List[int]:
        return sorted(self._trace_slot)

    def has_profile(self, profile_id: int) -> bool:
        return profile_id in self._profile_slot

    def has_trace(self, profile_id: int) -> bool:
        return profile_id in self._trace_slot

    def record_count(self, profile_id: int) -> int:
        return int(self.profile_index[self._profile_entry(profile_id)]["record_count"])

    def trace_bounds(self, profile_id: int) -> Tuple[int, int]:
        entry = self.trace_index[self._trace_entry(profile_id)]
        return int(entry["t_begin_ns"]), int(entry["t_end_ns"])

    def _profile_entry(self, profile_id: int) -> int:
        try:
            return self._profile_slot[int(profile_id)]
        except KeyError:
            raise NotFound(f"Profile {profile_id} not in {PROFILE_FILE}")

    def _trace_entry(self, profile_id: int) -> int:
        try:
            return self._trace_slot[int(profile_id)]
        except KeyError:
            raise NotFound(f"No trace for profile {profile_id} in {TRACE_FILE}")

    def _profile_body(self, profile_id: int) -> np.ndarray:
        entry = self.profile_index[self._profile_entry(profile_id)]
        return np.frombuffer(
            self._profile_mm,
            dtype=RECORD_DTYPE,
            count=int(entry["record_count"]),
            offset=int(entry["offset"]),
        )

    def _trace_body(self, profile_id: int) -> np.ndarray:
        entry = self.trace_index[self._trace_entry(profile_id)]
        return np.frombuffer(
            self._trace_mm,
            dtype=EVENT_DTYPE,
            count=int(entry["event_count"]),
            offset=int(entry["offset"]),
        )

    def read_profile_array(
        self,
        profile_id: int,
        ctx_ids: Optional[Iterable[int]] = None,
        metric_ids: Optional[Iterable[int]] = None,
    ) -> np.ndarray:
        """
        Read the records of one profile matching both filters.

        Sparse requests locate each context with a binary search over the
        sorted body; dense requests fall back to one vectorised pass.

        :param profile_id: Profile to read
        :param ctx_ids: Context ids to keep (None keeps all)
        :param metric_ids: Metric ids to keep (None keeps all)
        :return: Copy of the matching records in (ctx_id, metric_id) order
        :raises NotFound: If the profile is not indexed
        """
        body = self._profile_body(profile_id)
        n = len(body)
        if ctx_ids is None:
            selected = body
            probes = n
        else:
            wanted = np.unique(np.fromiter(ctx_ids, dtype=np.int64))
            if len(wanted) == 0 or n == 0:
                return np.zeros(0, dtype=RECORD_DTYPE)
            if len(wanted) * (n.bit_length() + 1) * 4 < n:
                column = _ProbeColumn(body["ctx_id"])
                pieces = []
                lo = 0
                for ctx in wanted.tolist():
                    lo = bisect.bisect_left(column, ctx, lo, n)
                    hi = bisect.bisect_right(column, ctx, lo, n)
                    if hi > lo:
                        pieces.append(np.arange(lo, hi))
                    lo = hi
                rows = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)
                selected = body[rows]
                probes = column.probes
            else:
                selected = body[np.isin(body["ctx_id"], wanted)]
                probes = n

        if metric_ids is not None:
            metrics = np.fromiter(metric_ids, dtype=np.int64)
            selected = selected[np.isin(selected["metric_id"], metrics)]

        result = np.array(selected, dtype=RECORD_DTYPE)
        self.stats.add(probes=probes, records=len(result))
        return result

    def read_trace_window_array(
        self, profile_id: int, t0_ns: int, t1_ns: int
    ) -> Tuple[np.ndarray, Optional[TraceEvent]]:
        """
        Read the events with ``t0_ns <= timestamp < t1_ns``.

        :return: (events, carry_in) where carry_in is the last event strictly
            before ``t0_ns`` (the context active when the window opens)
        :raises NotFound: If the profile has no trace
        """
        if t0_ns > t1_ns:
            raise ValueError(f"Empty time window: {t0_ns} > {t1_ns}")
        body = self._trace_body(profile_id)
        column = _ProbeColumn(body["timestamp_ns"])
        lo = bisect.bisect_left(column, t0_ns)
        hi = bisect.bisect_left(column, t1_ns, lo)
        carry_in = None
        if lo > 0:
            prev = body[lo - 1]
            carry_in = TraceEvent(int(prev["timestamp_ns"]), int(prev["ctx_id"]))
        events = np.array(body[lo:hi], dtype=EVENT_DTYPE)
        self.stats.add(probes=column.probes, events=len(events))
        return events, carry_in

    def read_trace(self, profile_id: int) -> TraceData:
        """Read a whole trace with its time bounds."""
        t_begin, t_end = self.trace_bounds(profile_id)
        events = np.array(self._trace_body(profile_id), dtype=EVENT_DTYPE)
        self.stats.add(events=len(events))
        return TraceData(events=events, t_begin_ns=t_begin, t_end_ns=t_end)


def open_database(path: Union[str, Path]) -> DbHandle:
    """
    Open a database directory for random access.

    Only ``meta.bin`` and the index blocks are read; bodies stay mapped.

    :param path: Database directory
    :return: Open handle
    :raises FormatError: On bad magic, version or truncated index
    :raises IoError: If a file is missing or unreadable
    """
    return DbHandle(path)


def read_profile_records(
    h: DbHandle,
    profile_id: int,
    ctx_ids: Optional[Iterable[int]] = None,
    metric_ids: Optional[Iterable[int]] = None,
) -> List[ProfileRecord]:
    """Selective read of one profile as a list of records."""
    records = h.read_profile_array(profile_id, ctx_ids, metric_ids)
    return [
        ProfileRecord(int(c), int(m), float(v))
        for c, m, v in zip(records["ctx_id"], records["metric_id"], records["value"])
    ]


def read_trace_window(
    h: DbHandle, profile_id: int, t0_ns: int, t1_ns: int
) -> Tuple[List[TraceEvent], Optional[TraceEvent]]:
    """Windowed trace read as a list of events plus the carry-in event."""
    events, carry_in = h.read_trace_window_array(profile_id, t0_ns, t1_ns)
    return [
        TraceEvent(int(t), int(c)) for t, c in zip(events["timestamp_ns"], events["ctx_id"])
    ], carry_in


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class Violation:
    file: str
    profile_id: Optional[int]
    position: Optional[int]
    message: str

    def __str__(self) -> str:
        where = self.file
        if self.profile_id is not None:
            where += f" profile {self.profile_id}"
        if self.position is not None:
            where += f" #{self.position}"
        return f"{where}: {self.message}"


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def add(self, file: str, profile_id: Optional[int], position: Optional[int], message: str):
        self.violations.append(Violation(file, profile_id, position, message))

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [
                {
                    "file": v.file,
                    "profile_id": v.profile_id,
                    "position": v.position,
                    "message": v.message,
                }
                for v in self.violations
            ],
        }


def validate_database(h: DbHandle) -> ValidationReport:
    """
    Check every stored invariant and report each violation with its location.

    :param h: Open handle
    :return: Report, empty iff the database is valid
    """
    report = ValidationReport()
    meta = h.meta
    n_ctx = len(meta.cct)

    seen_ids, seen_keys = set(), set()
    for m in meta.metrics:
        if m.metric_id in seen_ids:
            report.add(META_FILE, None, None, f"duplicate metric id {m.metric_id}")
        if (m.name, m.scope) in seen_keys:
            report.add(META_FILE, None, None, f"duplicate metric {m.name} ({m.scope.short})")
        seen_ids.add(m.metric_id)
        seen_keys.add((m.name, m.scope))
    known_metrics = np.array(sorted(seen_ids), dtype=np.int64)

    seen_profiles = set()
    for p in meta.profiles:
        if p.profile_id in seen_profiles:
            report.add(META_FILE, p.profile_id, None, "duplicate profile id")
        seen_profiles.add(p.profile_id)
        if p.profile_id == SUMMARY_PROFILE_ID and p.rank != SUMMARY_RANK:
            report.add(META_FILE, p.profile_id, None, "summary profile must have rank -1")
        if p.profile_id != SUMMARY_PROFILE_ID and not p.hostname:
            report.add(META_FILE, p.profile_id, None, "empty hostname")

    for pid in h.profile_ids:
        if pid not in seen_profiles:
            report.add(PROFILE_FILE, pid, None, "profile not described in metadata")
        body = h._profile_body(pid)
        if len(body) == 0:
            continue
        keys = record_keys(body)
        for pos in (np.flatnonzero(np.diff(keys) <= 0) + 1).tolist():
            report.add(PROFILE_FILE, pid, pos, "record not strictly after its predecessor")
        for pos in np.flatnonzero(body["ctx_id"].astype(np.int64) >= n_ctx).tolist():
            report.add(PROFILE_FILE, pid, pos, f"unknown ctx_id {int(body[pos]['ctx_id'])}")
        unknown = ~np.isin(body["metric_id"].astype(np.int64), known_metrics)
        for pos in np.flatnonzero(unknown).tolist():
            report.add(PROFILE_FILE, pid, pos, f"unknown metric_id {int(body[pos]['metric_id'])}")
        values = body["value"]
        bad = ~np.isfinite(values) | (values < 0)
        for pos in np.flatnonzero(bad).tolist():
            report.add(PROFILE_FILE, pid, pos, f"invalid value {float(values[pos])}")

    for pid in h.trace_ids:
        if pid not in seen_profiles:
            report.add(TRACE_FILE, pid, None, "trace for profile not described in metadata")
        t_begin, t_end = h.trace_bounds(pid)
        body = h._trace_body(pid)
        if len(body) == 0:
            continue
        ts = body["timestamp_ns"]
        for pos in (np.flatnonzero(ts[1:] < ts[:-1]) + 1).tolist():
            report.add(TRACE_FILE, pid, pos, "timestamp decreases")
        if int(ts[0]) < t_begin:
            report.add(TRACE_FILE, pid, 0, "event before trace begin")
        if int(ts[-1]) > t_end:
            report.add(TRACE_FILE, pid, len(body) - 1, "event after trace end")
        for pos in np.flatnonzero(body["ctx_id"].astype(np.int64) >= n_ctx).tolist():
            report.add(TRACE_FILE, pid, pos, f"dangling ctx_id {int(body[pos]['ctx_id'])}")

    if report.violations:
        logging.debug(f"Validation of {h.path} found {len(report)} violation(s)")
    return report
