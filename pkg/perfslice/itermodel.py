#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Iteration detection, per-interval profiles and the (node, trace, iteration) model"""

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DanglingContext, NoIterations, NoPeriodicity, NotFound
from .frame import DType, Table
from .store import CallingContextTree, DbHandle, TraceData, TraceEvent

GAP_ITERATION = -1
DEFAULT_MIN_ITERS = 3
DEFAULT_CV_MAX = 0.2

MODEL_SCHEMA = {
    "ctx_id": DType.I64,
    "trace_id": DType.I64,
    "iteration": DType.I64,
    "time_incl_s": DType.F64,
    "time_excl_s": DType.F64,
}


@dataclass(frozen=True)
class Interval:
    t0_ns: int
    t1_ns: int

    def __post_init__(self):
        if self.t0_ns >= self.t1_ns:
            raise ValueError(f"Interval [{self.t0_ns}, {self.t1_ns}) is empty")

    @property
    def duration_ns(self) -> int:
        return self.t1_ns - self.t0_ns


@dataclass
class IntervalProfile:
    """Dense inclusive and exclusive nanoseconds per context for one interval"""

    inclusive_ns: np.ndarray
    exclusive_ns: np.ndarray

    @classmethod
    def zeros(cls, n_ctx: int) -> "IntervalProfile":
        return cls(np.zeros(n_ctx, dtype=np.int64), np.zeros(n_ctx, dtype=np.int64))

    def __add__(self, other: "IntervalProfile") -> "IntervalProfile":
        return IntervalProfile(self.inclusive_ns + other.inclusive_ns, self.exclusive_ns + other.exclusive_ns)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, IntervalProfile)
            and np.array_equal(self.inclusive_ns, other.inclusive_ns)
            and np.array_equal(self.exclusive_ns, other.exclusive_ns)
        )

    def __getitem__(self, ctx_id: int) -> Tuple[int, int]:
        return int(self.inclusive_ns[ctx_id]), int(self.exclusive_ns[ctx_id])

    def to_dict(self) -> Dict[int, Tuple[int, int]]:
        """Non-zero contexts as ``ctx_id -> (inclusive_ns, exclusive_ns)``."""
        return {int(c): self[int(c)] for c in np.flatnonzero(self.inclusive_ns)}


def _event_arrays(events: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return events["timestamp_ns"].astype(np.int64), events["ctx_id"].astype(np.int64)


def _check_contexts(ctx_ids: np.ndarray, cct: CallingContextTree) -> None:
    if len(ctx_ids) and int(ctx_ids.max()) >= len(cct):
        bad = int(ctx_ids[ctx_ids >= len(cct)][0])
        raise DanglingContext(f"Trace references context {bad}, tree has {len(cct)} nodes")


def rematerialize(
    events: np.ndarray,
    interval: Interval,
    cct: CallingContextTree,
    t_end_ns: int,
    carry_in: Optional[TraceEvent] = None,
) -> IntervalProfile:
    """
    Integrate trace segments over one interval.

    Segment i runs from event i to event i + 1 (the last one to
    ``t_end_ns``); ``carry_in`` opens a segment before the first event.
    Clipped durations go to the segment's context (exclusive) and to every
    ancestor (inclusive).

    :param events: Events sorted by timestamp
    :param interval: Time range to integrate
    :param cct: Calling context tree
    :param t_end_ns: Trace end, closing the last segment
    :param carry_in: Event active before the first one, if any
    :raises DanglingContext: If an event names a context outside the tree
    """
    ts, ctx = _event_arrays(events)
    if carry_in is not None:
        ts = np.concatenate([[carry_in.timestamp_ns], ts])
        ctx = np.concatenate([[carry_in.ctx_id], ctx])
    _check_contexts(ctx, cct)

    profile = IntervalProfile.zeros(len(cct))
    if len(ts) == 0:
        return profile
    ends = np.append(ts[1:], t_end_ns)
    # segments overlapping the interval
    lo = max(int(np.searchsorted(ts, interval.t0_ns, side="right")) - 1, 0)
    hi = int(np.searchsorted(ts, interval.t1_ns, side="left"))
    starts = np.maximum(ts[lo:hi], interval.t0_ns)
    stops = np.minimum(ends[lo:hi], interval.t1_ns)
    durations = np.maximum(stops - starts, 0)
    np.add.at(profile.exclusive_ns, ctx[lo:hi], durations)
    profile.inclusive_ns = cct.inclusive_from_exclusive(profile.exclusive_ns)
    return profile


def trace_profile(trace: TraceData, cct: CallingContextTree) -> IntervalProfile:
    """Profile of a whole trace, ``[t_begin, t_end)``."""
    if trace.t_end_ns <= trace.t_begin_ns:
        return IntervalProfile.zeros(len(cct))
    return rematerialize(trace.events, Interval(trace.t_begin_ns, trace.t_end_ns), cct, trace.t_end_ns)


def detect_iterations(trace: TraceData, cct: CallingContextTree, anchor: int) -> List[Interval]:
    """
    Split a trace at every entry into the anchor's subtree.

    An entry is an event inside the subtree whose predecessor is outside it
    (the first event counts as an entry when inside). Iteration k runs from
    entry k to entry k + 1, the last one to the trace end.

    :raises NotFound: If the anchor is not in the tree
    :raises NoIterations: If the anchor is never entered
    """
    inside = cct.subtree_mask(anchor)
    ts, ctx = _event_arrays(trace.events)
    _check_contexts(ctx, cct)
    active = inside[ctx]
    entered = active & ~np.concatenate([[False], active[:-1]])
    boundaries = np.unique(ts[entered])
    boundaries = boundaries[boundaries < trace.t_end_ns]
    if len(boundaries) == 0:
        raise NoIterations(f"Anchor {anchor} ({cct.names[anchor]}) is never entered")
    stops = np.append(boundaries[1:], trace.t_end_ns)
    return [Interval(int(a), int(b)) for a, b in zip(boundaries, stops)]


def gap_interval(trace: TraceData, intervals: Sequence[Interval]) -> Optional[Interval]:
    """Time before the first iteration, if any."""
    if intervals and intervals[0].t0_ns > trace.t_begin_ns:
        return Interval(trace.t_begin_ns, intervals[0].t0_ns)
    return None


def _population_cv(values: np.ndarray) -> Optional[float]:
    mean = float(values.mean())
    if mean <= 0:
        return None
    return float(values.std()) / mean


def suggest_anchor(
    trace: TraceData,
    cct: CallingContextTree,
    min_iters: int = DEFAULT_MIN_ITERS,
    cv_max: float = DEFAULT_CV_MAX,
) -> int:
    """
    Pick the context whose subtree entries look like loop iterations.

    Candidates are entered at least ``min_iters`` times with a population
    CV of inter-entry gaps at most ``cv_max``; the one covering the most
    time wins, ties going to the smallest ctx id.

    :raises NoPeriodicity: If no context qualifies
    """
    ts, ctx = _event_arrays(trace.events)
    _check_contexts(ctx, cct)
    if len(ts) == 0:
        raise NoPeriodicity("Trace has no events")

    entries: Dict[int, List[int]] = {}
    previous: set = set()
    for t, c in zip(ts.tolist(), ctx.tolist()):
        path = cct.ancestors(c)
        for node in path:
            if node in previous:
                break
            entries.setdefault(node, []).append(t)
        previous = set(path)

    covered = trace_profile(trace, cct).inclusive_ns
    best, best_time = None, -1
    for node in sorted(entries):
        times = np.array(entries[node], dtype=np.int64)
        if len(times) < min_iters:
            continue
        cv = _population_cv(np.diff(times).astype(np.float64))
        if cv is None or cv > cv_max:
            continue
        if int(covered[node]) > best_time:
            best, best_time = node, int(covered[node])
    if best is None:
        raise NoPeriodicity(
            f"No context entered >= {min_iters} times with gap CV <= {cv_max}"
        )
    logging.debug(f"Suggested anchor {best} ({cct.names[best]}), {len(entries[best])} entries")
    return best


# ---------------------------------------------------------------------------
# Tri-dimensional model
# ---------------------------------------------------------------------------


@dataclass
class TraceIterations:
    """Per-iteration times of the tracked contexts in one trace"""

    trace_id: int
    # [iteration, tracked ctx] nanoseconds
    incl_ns: np.ndarray
    excl_ns: np.ndarray
    gap_incl_ns: np.ndarray
    gap_excl_ns: np.ndarray
    boundaries_ns: List[int] = field(default_factory=list)

    @property
    def n_iterations(self) -> int:
        return self.incl_ns.shape[0]


class TriModel:
    """Times keyed by (ctx_id, trace_id, iteration).

    Traces keep their own iteration counts; cross-trace statistics use the
    common ordinals ``0 .. n_iterations - 1``.
    """

    def __init__(
        self,
        ctx_ids: Sequence[int],
        traces: Sequence[TraceIterations],
        anchor_ctx: Optional[int] = None,
        skipped: Sequence[int] = (),
    ):
        self.ctx_ids = [int(c) for c in ctx_ids]
        self.traces = sorted(traces, key=lambda t: t.trace_id)
        self.anchor_ctx = anchor_ctx
        self.skipped = list(skipped)
        self._column = {c: i for i, c in enumerate(self.ctx_ids)}
        self._trace = {t.trace_id: t for t in self.traces}

    @classmethod
    def from_matrix(
        cls,
        times_s: Dict[int, np.ndarray],
        trace_ids: Optional[Sequence[int]] = None,
        excl_s: Optional[Dict[int, np.ndarray]] = None,
    ) -> "TriModel":
        """
        Build a model from ``ctx_id -> [trace, iteration]`` seconds.

        Exclusive times default to the inclusive ones.
        """
        ctx_ids = sorted(times_s)
        if not ctx_ids:
            return cls([], [])
        shape = np.asarray(times_s[ctx_ids[0]]).shape
        trace_ids = list(trace_ids) if trace_ids is not None else list(range(shape[0]))
        excl_s = excl_s or times_s

        def to_ns(matrices):
            return np.stack([np.rint(np.asarray(matrices[c], dtype=float) * 1e9) for c in ctx_ids], axis=-1).astype(np.int64)

        incl, excl = to_ns(times_s), to_ns(excl_s)
        zeros = np.zeros(len(ctx_ids), dtype=np.int64)
        traces = [
            TraceIterations(tid, incl[i], excl[i], zeros.copy(), zeros.copy())
            for i, tid in enumerate(trace_ids)
        ]
        return cls(ctx_ids, traces)

    @property
    def trace_ids(self) -> List[int]:
        return [t.trace_id for t in self.traces]

    @property
    def n_traces(self) -> int:
        return len(self.traces)

    @property
    def n_iterations(self) -> int:
        """Iterations present in every trace."""
        return min((t.n_iterations for t in self.traces), default=0)

    def iteration_counts(self) -> Dict[int, int]:
        return {t.trace_id: t.n_iterations for t in self.traces}

    def _ctx_column(self, ctx_id: int) -> int:
        try:
            return self._column[int(ctx_id)]
        except KeyError:
            raise NotFound(f"Context {ctx_id} is not tracked by the model")

    def matrix(self, ctx_id: int, inclusive: bool = True) -> np.ndarray:
        """[trace, common iteration] seconds of one context."""
        col = self._ctx_column(ctx_id)
        n = self.n_iterations
        if not self.traces:
            return np.zeros((0, 0))
        rows = [(t.incl_ns if inclusive else t.excl_ns)[:n, col] for t in self.traces]
        return np.stack(rows).astype(np.float64) / 1e9

    def to_table(self, include_gaps: bool = False) -> Table:
        """
        Long-format rows sorted by (ctx_id, trace_id, iteration).

        Gap rows use iteration -1.
        """
        columns: Dict[str, list] = {name: [] for name in MODEL_SCHEMA}
        for col, ctx in enumerate(self.ctx_ids):
            for t in self.traces:
                rows = []
                if include_gaps:
                    rows.append((GAP_ITERATION, t.gap_incl_ns[col], t.gap_excl_ns[col]))
                rows.extend((k, t.incl_ns[k, col], t.excl_ns[k, col]) for k in range(t.n_iterations))
                for k, incl, excl in rows:
                    columns["ctx_id"].append(ctx)
                    columns["trace_id"].append(t.trace_id)
                    columns["iteration"].append(k)
                    columns["time_incl_s"].append(int(incl) / 1e9)
                    columns["time_excl_s"].append(int(excl) / 1e9)
        if not columns["ctx_id"]:
            return Table.empty(MODEL_SCHEMA)
        return Table.from_columns(
            {name: np.array(values, dtype=MODEL_SCHEMA[name].numpy) for name, values in columns.items()},
            MODEL_SCHEMA,
        )

    def to_csv(self, include_gaps: bool = False) -> str:
        return self.to_table(include_gaps).to_csv()


def trace_iterations(
    trace: TraceData,
    trace_id: int,
    cct: CallingContextTree,
    anchor: int,
    ctx_ids: Sequence[int],
) -> TraceIterations:
    """Detect the iterations of one trace and re-materialize each of them."""
    intervals = detect_iterations(trace, cct, anchor)
    columns = np.asarray(ctx_ids, dtype=np.int64)
    incl = np.zeros((len(intervals), len(columns)), dtype=np.int64)
    excl = np.zeros_like(incl)
    for k, interval in enumerate(intervals):
        p = rematerialize(trace.events, interval, cct, trace.t_end_ns)
        incl[k], excl[k] = p.inclusive_ns[columns], p.exclusive_ns[columns]

    gap = gap_interval(trace, intervals)
    gap_profile = (
        rematerialize(trace.events, gap, cct, trace.t_end_ns) if gap else IntervalProfile.zeros(len(cct))
    )
    return TraceIterations(
        trace_id=trace_id,
        incl_ns=incl,
        excl_ns=excl,
        gap_incl_ns=gap_profile.inclusive_ns[columns],
        gap_excl_ns=gap_profile.exclusive_ns[columns],
        boundaries_ns=[i.t0_ns for i in intervals],
    )


def _vote_anchor(traces: Dict[int, TraceData], cct: CallingContextTree) -> int:
    votes = Counter()
    for pid, trace in traces.items():
        try:
            votes[suggest_anchor(trace, cct)] += 1
        except NoPeriodicity as e:
            logging.debug(f"Trace {pid}: {e}")
    if not votes:
        raise NoPeriodicity("No trace shows a periodic context")
    top = max(votes.values())
    return min(c for c, n in votes.items() if n == top)


def build_tri_model(
    h: DbHandle,
    profile_ids: Sequence[int],
    anchor: Union[int, str] = "auto",
    ctx_ids: Optional[Sequence[int]] = None,
    parallelism: int = 1,
) -> TriModel:
    """
    Assemble the (node, trace, iteration) model from traces.

    :param h: Open database
    :param profile_ids: Profiles whose traces are modelled
    :param anchor: Anchor ctx id, or ``"auto"`` for the most frequent
        per-trace suggestion (ties to the smallest id)
    :param ctx_ids: Tracked contexts (default all)
    :param parallelism: Worker count over traces
    :raises NoPeriodicity: If ``anchor="auto"`` finds no periodic context
    :raises NoIterations: If no trace enters the anchor
    """
    cct = h.meta.cct
    ids = sorted(set(int(p) for p in profile_ids))
    traces = {pid: h.read_trace(pid) for pid in ids}
    anchor_ctx = _vote_anchor(traces, cct) if anchor == "auto" else int(anchor)
    cct[anchor_ctx]
    tracked = list(range(len(cct))) if ctx_ids is None else sorted(set(int(c) for c in ctx_ids))

    def one(pid):
        try:
            return trace_iterations(traces[pid], pid, cct, anchor_ctx, tracked)
        except NoIterations as e:
            logging.warning(f"Skipping trace {pid}: {e}")
            return None

    if parallelism > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, ids))
    else:
        results = [one(pid) for pid in ids]

    kept = [r for r in results if r is not None]
    skipped = [pid for pid, r in zip(ids, results) if r is None]
    if ids and not kept:
        raise NoIterations(f"No trace enters anchor {anchor_ctx} ({cct.names[anchor_ctx]})")
    model = TriModel(tracked, kept, anchor_ctx=anchor_ctx, skipped=skipped)
    logging.debug(
        f"Model: {model.n_traces} traces, {model.n_iterations} common iterations, "
        f"{len(tracked)} contexts, anchor {anchor_ctx}"
    )
    return model


def slice_tri(
    model: TriModel,
    iteration: Optional[int] = None,
    trace: Optional[int] = None,
    node: Optional[int] = None,
) -> Table:
    """
    Fix one dimension of the model and return the other two.

    Fixing an iteration uses the common ordinals of all traces.

    :raises NotFound: If the fixed key is out of range
    """
    fixed = [v is not None for v in (iteration, trace, node)]
    if sum(fixed) != 1:
        raise ValueError("Fix exactly one of iteration, trace or node")
    table = model.to_table()
    if iteration is not None:
        if not 0 <= iteration < model.n_iterations:
            raise NotFound(f"Iteration {iteration} not in the common range 0..{model.n_iterations - 1}")
        mask = table["iteration"] == iteration
        keep = ["trace_id", "ctx_id"]
    elif trace is not None:
        if trace not in model.trace_ids:
            raise NotFound(f"Trace {trace} not in the model")
        mask = table["trace_id"] == trace
        keep = ["iteration", "ctx_id"]
    else:
        model._ctx_column(node)
        mask = (table["ctx_id"] == node) & (table["iteration"] < model.n_iterations)
        keep = ["trace_id", "iteration"]
    return table.take(np.flatnonzero(mask)).select(keep + ["time_incl_s", "time_excl_s"])
