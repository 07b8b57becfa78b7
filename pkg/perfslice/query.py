#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Query layer: expression parsing, id resolution and the slice cache

Queries are three short expressions::

    exec   summary | rank | rank(0-100000:100) | rank(3,5,8)
    ctx    * | function(MPI_*) | path(main->hypre_*->MPI_Allreduce)
    metric cputime:prop (i)

Globs support ``*`` and ``?`` only, are case-sensitive and must match the
whole context name.
"""

import logging
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import NoSuchMetric, ParseError
from .frame import Table, merge
from .ingest import KeepSet, ingest_traces, read_requests, records_to_table
from .store import RECORD_DTYPE, SUMMARY_PROFILE_ID, DbHandle, Metadata, Scope, record_keys


class ExecKind(Enum):
    SUMMARY = "summary"
    RANK_RANGE = "rank_range"
    RANK_LIST = "rank_list"
    ALL_RANKS = "all_ranks"


class CtxKind(Enum):
    ALL = "all"
    FUNCTION_GLOB = "function_glob"
    PATH = "path"


class Variant(Enum):
    SUM = "sum"
    PROP = "prop"


@dataclass(frozen=True)
class ExecSelector:
    kind: ExecKind
    lo: int = 0
    hi: int = 0
    stride: int = 1
    ranks: Tuple[int, ...] = ()


@dataclass(frozen=True)
class CtxSelector:
    kind: CtxKind
    patterns: Tuple[str, ...] = ()


@dataclass(frozen=True)
class MetricSelector:
    name: str
    variant: Variant
    scope: Scope


@dataclass(frozen=True)
class QuerySpec:
    exec_selector: ExecSelector
    ctx_selector: CtxSelector
    metric_selector: MetricSelector
    time_window: Optional[Tuple[int, int]] = None


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, message: str, pos: Optional[int] = None):
        raise ParseError(message, self.pos if pos is None else pos, self.text)

    def at_end(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self, literal: str) -> bool:
        return self.text.startswith(literal, self.pos)

    def accept(self, literal: str) -> bool:
        if self.peek(literal):
            self.pos += len(literal)
            return True
        return False

    def expect(self, literal: str) -> None:
        if not self.accept(literal):
            self.fail(f"Expected {literal!r}")

    def number(self) -> int:
        start = self.pos
        while not self.at_end() and self.text[self.pos] in "0123456789":
            self.pos += 1
        if self.pos == start:
            self.fail("Expected a non-negative integer")
        return int(self.text[start : self.pos])

    def until(self, stops: Sequence[str]) -> str:
        start = self.pos
        while not self.at_end() and not any(self.peek(s) for s in stops):
            self.pos += 1
        return self.text[start : self.pos]

    def finish(self) -> None:
        if not self.at_end():
            self.fail("Unexpected trailing characters")


def _parse_exec(text: str) -> ExecSelector:
    cur = _Cursor(text)
    if cur.accept("summary"):
        cur.finish()
        return ExecSelector(ExecKind.SUMMARY)
    cur.expect("rank")
    if cur.at_end():
        return ExecSelector(ExecKind.ALL_RANKS)
    cur.expect("(")
    first = cur.number()
    if cur.accept("-"):
        hi_pos = cur.pos
        hi = cur.number()
        if hi < first:
            cur.fail(f"Inverted rank range {first}-{hi}", hi_pos)
        stride = 1
        if cur.accept(":"):
            stride_pos = cur.pos
            stride = cur.number()
            if stride < 1:
                cur.fail("Stride must be >= 1", stride_pos)
        cur.expect(")")
        cur.finish()
        return ExecSelector(ExecKind.RANK_RANGE, lo=first, hi=hi, stride=stride)
    ranks = [first]
    while cur.accept(","):
        ranks.append(cur.number())
    cur.expect(")")
    cur.finish()
    return ExecSelector(ExecKind.RANK_LIST, ranks=tuple(ranks))


def _parse_ctx(text: str) -> CtxSelector:
    cur = _Cursor(text)
    if cur.accept("*"):
        cur.finish()
        return CtxSelector(CtxKind.ALL)
    if cur.accept("function("):
        start = cur.pos
        glob = cur.until([")"])
        if not glob:
            cur.fail("Empty function pattern", start)
        cur.expect(")")
        cur.finish()
        return CtxSelector(CtxKind.FUNCTION_GLOB, (glob,))
    if cur.accept("path("):
        globs = []
        while True:
            start = cur.pos
            glob = cur.until(["->", ")"])
            if not glob:
                cur.fail("Empty path element", start)
            globs.append(glob)
            if not cur.accept("->"):
                break
        cur.expect(")")
        cur.finish()
        return CtxSelector(CtxKind.PATH, tuple(globs))
    cur.fail("Expected '*', 'function(' or 'path('")


def _parse_metric(text: str) -> MetricSelector:
    cur = _Cursor(text)
    start = cur.pos
    name = cur.until([":"])
    if not name or not re.fullmatch(r"[A-Za-z0-9_.\-]+", name):
        cur.fail("Expected a metric name", start)
    cur.expect(":")
    if cur.accept("sum"):
        variant = Variant.SUM
    elif cur.accept("prop"):
        variant = Variant.PROP
    else:
        cur.fail("Expected 'sum' or 'prop'")
    cur.expect(" (")
    if cur.accept("i"):
        scope = Scope.INCLUSIVE
    elif cur.accept("e"):
        scope = Scope.EXCLUSIVE
    else:
        cur.fail("Expected scope 'i' or 'e'")
    cur.expect(")")
    cur.finish()
    return MetricSelector(name, variant, scope)


def parse_window(window: Union[None, str, Tuple[int, int]]) -> Optional[Tuple[int, int]]:
    """Parse ``T0:T1`` (nanoseconds) or validate a (t0, t1) pair."""
    if window is None:
        return None
    if isinstance(window, str):
        cur = _Cursor(window)
        t0 = cur.number()
        cur.expect(":")
        t1_pos = cur.pos
        t1 = cur.number()
        cur.finish()
        if t1 < t0:
            cur.fail("Window ends before it starts", t1_pos)
        return (t0, t1)
    t0, t1 = (int(v) for v in window)
    if t0 < 0 or t1 < t0:
        raise ParseError(f"Invalid window {t0}:{t1}", 0)
    return (t0, t1)


def parse_query(
    exec_text: str,
    ctx_text: str,
    metric_text: str,
    window: Union[None, str, Tuple[int, int]] = None,
) -> QuerySpec:
    """
    Parse the three query expressions.

    :raises ParseError: With the offset inside the offending expression
    """
    return QuerySpec(
        exec_selector=_parse_exec(exec_text.strip()),
        ctx_selector=_parse_ctx(ctx_text.strip()),
        metric_selector=_parse_metric(metric_text.strip()),
        time_window=parse_window(window),
    )


def render_query(spec: QuerySpec) -> Tuple[str, str, str]:
    """Canonical text of a query's exec, ctx and metric expressions."""
    e = spec.exec_selector
    if e.kind is ExecKind.SUMMARY:
        exec_text = "summary"
    elif e.kind is ExecKind.ALL_RANKS:
        exec_text = "rank"
    elif e.kind is ExecKind.RANK_RANGE:
        stride = f":{e.stride}" if e.stride != 1 else ""
        exec_text = f"rank({e.lo}-{e.hi}{stride})"
    else:
        exec_text = f"rank({','.join(map(str, e.ranks))})"

    c = spec.ctx_selector
    if c.kind is CtxKind.ALL:
        ctx_text = "*"
    elif c.kind is CtxKind.FUNCTION_GLOB:
        ctx_text = f"function({c.patterns[0]})"
    else:
        ctx_text = f"path({'->'.join(c.patterns)})"

    m = spec.metric_selector
    return exec_text, ctx_text, f"{m.name}:{m.variant.value} ({m.scope.short})"


def glob_to_regex(glob: str) -> "re.Pattern":
    parts = []
    for ch in glob:
        if ch == "*":
            parts.append(".*")
        elif ch == "?":
            parts.append(".")
        else:
            parts.append(re.escape(ch))
    return re.compile("".join(parts), re.DOTALL)


def glob_match(glob: str, name: str) -> bool:
    return glob_to_regex(glob).fullmatch(name) is not None


# ---------------------------------------------------------------------------
# Resolution
# ---------------------------------------------------------------------------


@dataclass
class IndexPlan:
    profile_ids: List[int]
    ctx_ids: List[int]
    metric_ids: List[int]
    variant: Variant = Variant.SUM

    @property
    def is_empty(self) -> bool:
        return not (self.profile_ids and self.ctx_ids and self.metric_ids)

    def keys(self) -> set:
        return {(p, c, m) for p in self.profile_ids for c in self.ctx_ids for m in self.metric_ids}


def _ctx_matches(selector: CtxSelector, meta: Metadata) -> np.ndarray:
    cct = meta.cct
    if selector.kind is CtxKind.ALL:
        return np.ones(len(cct), dtype=bool)
    if selector.kind is CtxKind.FUNCTION_GLOB:
        pattern = glob_to_regex(selector.patterns[0])
        return np.array([pattern.fullmatch(n) is not None for n in cct.names], dtype=bool)

    # path: leading globs match ancestors in order (greedy), last glob the node
    patterns = [glob_to_regex(g) for g in selector.patterns]
    lead, last = patterns[:-1], patterns[-1]
    progress = np.zeros(len(cct), dtype=np.int64)
    matched = np.zeros(len(cct), dtype=bool)
    for node in cct:
        before = 0 if node.is_root else int(progress[node.parent_id])
        matched[node.ctx_id] = before == len(lead) and last.fullmatch(node.name) is not None
        advance = before < len(lead) and lead[before].fullmatch(node.name) is not None
        progress[node.ctx_id] = before + (1 if advance else 0)
    return matched


def _exec_profiles(selector: ExecSelector, variant: Variant, meta: Metadata) -> List[int]:
    if selector.kind is ExecKind.SUMMARY:
        if variant is Variant.PROP:
            return meta.rank_profile_ids()
        return [SUMMARY_PROFILE_ID] if meta.has_summary else []
    if selector.kind is ExecKind.ALL_RANKS:
        return meta.rank_profile_ids()
    if selector.kind is ExecKind.RANK_RANGE:
        ranks = range(selector.lo, selector.hi + 1, selector.stride)
    else:
        ranks = selector.ranks
    ids = set()
    for rank in ranks:
        ids.update(meta.rank_profiles(rank))
    return sorted(ids)


def resolve_query(q: QuerySpec, meta: Metadata, keep: Optional[KeepSet] = None) -> IndexPlan:
    """
    Map a query to raw profile, context and metric ids.

    An empty plan is not an error; it is logged as a warning.

    :raises NoSuchMetric: If no metric has the requested name and scope
    """
    m = q.metric_selector
    metric = meta.find_metric(m.name, m.scope)
    if metric is None:
        raise NoSuchMetric(
            f"No metric {m.name!r} with scope {m.scope.short} (available: {', '.join(meta.metric_names())})"
        )

    mask = _ctx_matches(q.ctx_selector, meta)
    if keep is not None:
        mask &= keep.mask
    plan = IndexPlan(
        profile_ids=_exec_profiles(q.exec_selector, m.variant, meta),
        ctx_ids=np.flatnonzero(mask).tolist(),
        metric_ids=[metric.metric_id],
        variant=m.variant,
    )
    if plan.is_empty:
        logging.warning(f"Query {' '.join(render_query(q))} selects nothing")
    logging.debug(
        f"Plan: {len(plan.profile_ids)} profiles x {len(plan.ctx_ids)} contexts x {len(plan.metric_ids)} metrics"
    )
    return plan


# ---------------------------------------------------------------------------
# Session cache
# ---------------------------------------------------------------------------


@dataclass
class SessionStats:
    fetches: int = 0
    cache_hits: int = 0
    disk_reads: int = 0
    records_read: int = 0


class Session:
    """Accumulating slice cache over one open database.

    Concurrent fetches are serialized; the resident key set only grows.
    """

    def __init__(self, h: DbHandle, keep: Optional[KeepSet] = None, parallelism: int = 1):
        self.h = h
        self.meta = h.meta
        self.keep = keep if keep is not None else KeepSet.everything(h.meta.cct)
        self.parallelism = parallelism
        self.stats = SessionStats()
        self._lock = threading.Lock()
        # (profile_id, metric_id) -> mask of resident ctx ids
        self._resident: Dict[Tuple[int, int], np.ndarray] = {}
        self._records: Dict[int, np.ndarray] = {}

    def resolve(self, q: QuerySpec) -> IndexPlan:
        return resolve_query(q, self.meta, self.keep)

    def resident_keys(self) -> set:
        keys = set()
        for (pid, mid), mask in self._resident.items():
            keys.update((pid, int(c), mid) for c in np.flatnonzero(mask))
        return keys

    def _missing_requests(self, plan: IndexPlan) -> List[Tuple[int, np.ndarray, List[int]]]:
        wanted = np.asarray(plan.ctx_ids, dtype=np.int64)
        requests = []
        for pid in plan.profile_ids:
            for mid in plan.metric_ids:
                resident = self._resident.get((pid, mid))
                missing = wanted if resident is None else wanted[~resident[wanted]]
                if len(missing):
                    requests.append((pid, missing, [mid]))
        return requests

    def fetch(self, q: QuerySpec) -> Table:
        """
        Return the slice of a query, reading only keys not yet resident.

        :return: Slice table sorted by (profile_id, ctx_id, metric_id)
        """
        plan = self.resolve(q)
        with self._lock:
            requests = self._missing_requests(plan)
            results = read_requests(self.h, requests, self.parallelism)
            n_ctx = len(self.meta.cct)
            touched = set()
            for (pid, ctx, metrics), records in zip(requests, results):
                mask = self._resident.setdefault((pid, metrics[0]), np.zeros(n_ctx, dtype=bool))
                mask[ctx] = True
                if len(records):
                    previous = self._records.get(pid)
                    self._records[pid] = records if previous is None else np.concatenate([previous, records])
                    touched.add(pid)
            for pid in touched:
                body = self._records[pid]
                self._records[pid] = body[np.argsort(record_keys(body), kind="stable")]

            self.stats.fetches += 1
            self.stats.disk_reads += len(requests)
            self.stats.records_read += sum(len(r) for r in results)
            if not requests:
                self.stats.cache_hits += 1
                logging.debug("Fetch served from cache")
            return self._view(plan)

    def _view(self, plan: IndexPlan) -> Table:
        ctx_mask = np.zeros(len(self.meta.cct), dtype=bool)
        ctx_mask[np.asarray(plan.ctx_ids, dtype=np.int64)] = True
        metrics = np.asarray(plan.metric_ids, dtype=np.int64)
        pieces = []
        for pid in plan.profile_ids:
            body = self._records.get(pid, np.zeros(0, dtype=RECORD_DTYPE))
            selected = body[ctx_mask[body["ctx_id"]] & np.isin(body["metric_id"], metrics)]
            pieces.append((pid, selected))
        return records_to_table(pieces)

    def fetch_traces(self, q: QuerySpec):
        """Read the query's time window (whole traces when unset) for its profiles."""
        plan = self.resolve(q)
        ids = [pid for pid in plan.profile_ids if self.h.has_trace(pid)]
        if q.time_window is None:
            bounds = [self.h.trace_bounds(pid) for pid in ids]
            t0 = min((b[0] for b in bounds), default=0)
            t1 = max((b[1] for b in bounds), default=0) + 1
        else:
            t0, t1 = q.time_window
        return ingest_traces(self.h, ids, t0, t1, self.parallelism)


def fetch(s: Session, q: QuerySpec) -> Table:
    return s.fetch(q)


def profile_table(meta: Metadata) -> Table:
    profiles = sorted(meta.profiles, key=lambda p: p.profile_id)
    return Table.from_columns(
        {
            "profile_id": np.array([p.profile_id for p in profiles], dtype=np.int64),
            "rank": np.array([p.rank for p in profiles], dtype=np.int64),
        }
    )


def to_frame(s: Session, q: QuerySpec) -> Table:
    """
    Fetch a query and join each row with its profile's rank.

    :return: Table (profile_id, rank, ctx_id, metric_id, value)
    """
    view = s.fetch(q)
    joined = merge(view, profile_table(s.meta), on=["profile_id"])
    return joined.select(["profile_id", "rank", "ctx_id", "metric_id", "value"])
