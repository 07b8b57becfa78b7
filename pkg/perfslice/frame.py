#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Columnar tables with a sequential and a thread-parallel backend

Every column is one numpy array. Operations never mutate their inputs. The
parallel backend only splits work into independent pieces (row chunks, value
blocks, key columns) whose results are combined in a fixed order, so both
backends return bit-identical tables.

Floating-point sums follow one fixed order: values are cut into blocks of
``BLOCK_SIZE``, each block is summed left to right, and block totals are then
added left to right. Group sums are strict left-to-right sums over the rows of
each group in ascending row order.
"""

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import LengthMismatch, NanValue, NoSuchColumn, TypeMismatch

BLOCK_SIZE = 4096
PARALLEL_GRAIN = 1 << 15


class DType(Enum):
    I64 = "i64"
    U64 = "u64"
    F64 = "f64"
    STR = "str"
    BOOL = "bool"

    @property
    def numpy(self):
        return _NUMPY_TYPES[self]

    @property
    def is_numeric(self) -> bool:
        return self in (DType.I64, DType.U64, DType.F64)


_NUMPY_TYPES = {
    DType.I64: np.int64,
    DType.U64: np.uint64,
    DType.F64: np.float64,
    DType.STR: object,
    DType.BOOL: np.bool_,
}


def _infer_dtype(values: np.ndarray) -> DType:
    kind = values.dtype.kind
    if kind == "b":
        return DType.BOOL
    if kind == "i":
        return DType.I64
    if kind == "u":
        return DType.U64
    if kind == "f":
        return DType.F64
    if kind in "OUS":
        return DType.STR
    raise TypeMismatch(f"Unsupported column dtype {values.dtype}")


class Column:
    """Named, immutable, typed array"""

    def __init__(self, name: str, values: Any, dtype: Optional[DType] = None):
        array = values if isinstance(values, np.ndarray) else np.asarray(values)
        if dtype is None:
            dtype = DType.STR if array.size == 0 and array.dtype.kind in "OUS" else _infer_dtype(array)
        if array.ndim != 1:
            raise LengthMismatch(f"Column {name} must be one-dimensional")
        if dtype is DType.STR:
            array = np.array([str(v) for v in array.tolist()], dtype=object)
        else:
            array = np.array(array, dtype=dtype.numpy)
        array.flags.writeable = False
        self.name = name
        self.dtype = dtype
        self.values = array

    def __len__(self) -> int:
        return len(self.values)

    def __repr__(self) -> str:
        return f"Column({self.name!r}, {self.dtype.value}, n={len(self)})"

    def rename(self, name: str) -> "Column":
        return Column(name, self.values, self.dtype)

    def take(self, indices: np.ndarray) -> "Column":
        return Column(self.name, self.values[indices], self.dtype)

    def equals(self, other: "Column") -> bool:
        """Bit-level equality of name, dtype and values."""
        if self.name != other.name or self.dtype is not other.dtype or len(self) != len(other):
            return False
        if self.dtype is DType.F64:
            return bool(np.array_equal(self.values.view(np.uint64), other.values.view(np.uint64)))
        return bool(np.array_equal(self.values, other.values))


class Table:
    """Ordered collection of equally long columns with unique names"""

    def __init__(self, columns: Sequence[Column]):
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            raise ValueError(f"Duplicate column names: {names}")
        lengths = {len(c) for c in columns}
        if len(lengths) > 1:
            raise LengthMismatch(f"Columns have different lengths: {sorted(lengths)}")
        self._columns: Dict[str, Column] = {c.name: c for c in columns}
        self.n_rows = lengths.pop() if lengths else 0

    @classmethod
    def from_columns(
        cls, data: Dict[str, Any], dtypes: Optional[Dict[str, DType]] = None
    ) -> "Table":
        dtypes = dtypes or {}
        return cls([Column(name, values, dtypes.get(name)) for name, values in data.items()])

    @classmethod
    def empty(cls, schema: Dict[str, DType]) -> "Table":
        return cls([Column(name, np.zeros(0, dtype=d.numpy), d) for name, d in schema.items()])

    @classmethod
    def concat(cls, tables: Sequence["Table"]) -> "Table":
        """Stack tables with identical schemas in the given order."""
        if not tables:
            raise ValueError("Nothing to concatenate")
        first = tables[0]
        for t in tables[1:]:
            if t.schema() != first.schema():
                raise TypeMismatch("Cannot concatenate tables with different schemas")
        return cls(
            [
                Column(name, np.concatenate([t[name] for t in tables]), first.column(name).dtype)
                for name in first.column_names
            ]
        )

    @property
    def column_names(self) -> List[str]:
        return list(self._columns)

    def schema(self) -> Dict[str, DType]:
        return {name: c.dtype for name, c in self._columns.items()}

    def __len__(self) -> int:
        return self.n_rows

    def __contains__(self, name: str) -> bool:
        return name in self._columns

    def __getitem__(self, name: str) -> np.ndarray:
        return self.column(name).values

    def __repr__(self) -> str:
        cols = ", ".join(f"{n}:{c.dtype.value}" for n, c in self._columns.items())
        return f"Table({cols}; rows={self.n_rows})"

    def column(self, name: str) -> Column:
        try:
            return self._columns[name]
        except KeyError:
            raise NoSuchColumn(f"No column named {name!r} (have {self.column_names})")

    def columns(self) -> List[Column]:
        return list(self._columns.values())

    def take(self, indices: np.ndarray) -> "Table":
        return Table([c.take(indices) for c in self._columns.values()])

    def select(self, names: Sequence[str]) -> "Table":
        return Table([self.column(n) for n in names])

    def with_column(self, column: Column) -> "Table":
        cols = dict(self._columns)
        cols[column.name] = column
        return Table(list(cols.values()))

    def equals(self, other: "Table") -> bool:
        if self.column_names != other.column_names or self.n_rows != other.n_rows:
            return False
        return all(self.column(n).equals(other.column(n)) for n in self.column_names)

    def to_records(self) -> List[Dict[str, Any]]:
        """Rows as dicts of plain Python values (JSON-ready)."""
        lists = {n: c.values.tolist() for n, c in self._columns.items()}
        return [{n: lists[n][i] for n in lists} for i in range(self.n_rows)]

    def to_csv(self) -> str:
        """CSV text with a header row and CRLF line endings."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(self.column_names)
        lists = [c.values.tolist() for c in self._columns.values()]
        for row in zip(*lists):
            writer.writerow([_csv_cell(v) for v in row])
        return buf.getvalue()


def _csv_cell(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Backend:
    """Execution strategy: ``sequential`` or ``parallel`` with ``workers`` threads"""

    kind: str = "sequential"
    workers: int = 1

    def __post_init__(self):
        if self.kind not in ("sequential", "parallel"):
            raise ValueError(f"Unknown backend kind: {self.kind}")
        if self.workers < 1:
            raise ValueError("Backend needs at least one worker")

    @classmethod
    def sequential(cls) -> "Backend":
        return cls("sequential", 1)

    @classmethod
    def parallel(cls, workers: int) -> "Backend":
        return cls("parallel", workers)

    @classmethod
    def from_name(cls, name: str, workers: int = 1) -> "Backend":
        if name in ("seq", "sequential"):
            return cls.sequential()
        if name in ("par", "parallel"):
            return cls.parallel(workers)
        raise ValueError(f"Unknown backend: {name}")

    @property
    def is_parallel(self) -> bool:
        return self.kind == "parallel"

    def map(self, fn: Callable, items: Sequence) -> list:
        """Apply ``fn`` to every item; results keep the item order."""
        if not self.is_parallel or len(items) < 2:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, items))

    def chunks(self, n: int) -> List[Tuple[int, int]]:
        """Row ranges this backend processes independently."""
        if not self.is_parallel or n <= PARALLEL_GRAIN:
            return [(0, n)]
        parts = min(self.workers * 4, -(-n // PARALLEL_GRAIN))
        bounds = np.linspace(0, n, parts + 1).astype(np.int64)
        return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


SEQUENTIAL = Backend.sequential()


def _chunked(backend: Backend, n: int, fn: Callable[[int, int], np.ndarray]) -> np.ndarray:
    pieces = backend.map(lambda r: fn(*r), backend.chunks(n))
    return pieces[0] if len(pieces) == 1 else np.concatenate(pieces)


# ---------------------------------------------------------------------------
# Column operations
# ---------------------------------------------------------------------------

_COMPARATORS = {
    "<": np.less,
    "<=": np.less_equal,
    "≤": np.less_equal,
    "==": np.equal,
    "=": np.equal,
    ">=": np.greater_equal,
    "≥": np.greater_equal,
    ">": np.greater,
    "!=": np.not_equal,
    "≠": np.not_equal,
}


def _require_f64(*columns: Column) -> None:
    for c in columns:
        if c.dtype is not DType.F64:
            raise TypeMismatch(f"Column {c.name} is {c.dtype.value}, expected f64")


def _check_literal(column: Column, literal: Any) -> None:
    if column.dtype is DType.STR:
        ok = isinstance(literal, str)
    elif column.dtype is DType.BOOL:
        ok = isinstance(literal, (bool, np.bool_))
    elif column.dtype is DType.F64:
        ok = isinstance(literal, (int, float, np.integer, np.floating)) and not isinstance(literal, bool)
    else:
        ok = isinstance(literal, (int, np.integer)) and not isinstance(literal, bool)
    if not ok:
        raise TypeMismatch(
            f"Literal {literal!r} does not match column {column.name} of type {column.dtype.value}"
        )


def vector_add(a: Column, b: Column, backend: Backend = SEQUENTIAL) -> Column:
    _require_f64(a, b)
    if len(a) != len(b):
        raise LengthMismatch(f"Cannot add columns of length {len(a)} and {len(b)}")
    out = _chunked(backend, len(a), lambda i, j: a.values[i:j] + b.values[i:j])
    return Column(a.name, out, DType.F64)


def in_place_multiply(a: Column, scalar: float, backend: Backend = SEQUENTIAL) -> Column:
    """Multiply every element by ``scalar`` into a fresh buffer."""
    _require_f64(a)
    out = np.array(a.values, dtype=np.float64)

    def scale(r):
        np.multiply(out[r[0] : r[1]], scalar, out=out[r[0] : r[1]])

    backend.map(scale, backend.chunks(len(out)))
    return Column(a.name, out, DType.F64)


def _block_scan(values: np.ndarray, backend: Backend) -> np.ndarray:
    n = len(values)
    if n == 0:
        return np.zeros(0, dtype=np.float64)
    n_blocks = -(-n // BLOCK_SIZE)
    padded = np.zeros(n_blocks * BLOCK_SIZE, dtype=np.float64)
    padded[:n] = values
    blocks = padded.reshape(n_blocks, BLOCK_SIZE)

    if backend.is_parallel and n_blocks > 1:
        step = max(1, -(-n_blocks // (backend.workers * 4)))
        ranges = [(i, min(i + step, n_blocks)) for i in range(0, n_blocks, step)]
        local = np.concatenate(backend.map(lambda r: np.cumsum(blocks[r[0] : r[1]], axis=1), ranges))
    else:
        local = np.cumsum(blocks, axis=1)

    if n_blocks > 1:
        carries = np.cumsum(local[:-1, -1])
        local[1:] += carries[:, None]
    return local.reshape(-1)[:n]


def cumulative_sum(a: Column, backend: Backend = SEQUENTIAL) -> Column:
    """Blocked prefix sum: left to right inside each block, then block carries."""
    _require_f64(a)
    return Column(a.name, _block_scan(a.values, backend), DType.F64)


def reduce_sum(a: Column, backend: Backend = SEQUENTIAL) -> float:
    """Sum in blocked order; always equal to the last element of the prefix sum."""
    _require_f64(a)
    if len(a) == 0:
        return 0.0
    return float(_block_scan(a.values, backend)[-1])


def scalar_compare(a: Column, cmp: str, literal: Any, backend: Backend = SEQUENTIAL) -> Column:
    try:
        op = _COMPARATORS[cmp]
    except KeyError:
        raise ValueError(f"Unknown comparison operator: {cmp}")
    _check_literal(a, literal)
    out = _chunked(backend, len(a), lambda i, j: np.asarray(op(a.values[i:j], literal), dtype=bool))
    return Column(a.name, out, DType.BOOL)


# ---------------------------------------------------------------------------
# Table operations
# ---------------------------------------------------------------------------


def filter_rows(t: Table, predicate: Tuple[str, str, Any], backend: Backend = SEQUENTIAL) -> Table:
    """
    Keep the rows satisfying ``(column, cmp, literal)`` in their original order.

    :raises NoSuchColumn: If the column does not exist
    :raises TypeMismatch: If the literal type does not match the column
    """
    name, cmp, literal = predicate
    mask = scalar_compare(t.column(name), cmp, literal, backend).values
    return t.take(np.flatnonzero(mask))


def _key_codes(values: np.ndarray) -> np.ndarray:
    if len(values) == 0:
        return np.zeros(0, dtype=np.int64)
    _, inverse = np.unique(values, return_inverse=True)
    return inverse.reshape(-1).astype(np.int64)


def sort(
    t: Table,
    keys: Sequence[str],
    ascending: Union[bool, Sequence[bool]] = True,
    backend: Backend = SEQUENTIAL,
) -> Table:
    """
    Stable multi-key sort.

    :raises NoSuchColumn: If a key does not exist
    """
    keys = list(keys)
    if isinstance(ascending, bool):
        ascending = [ascending] * len(keys)
    if len(ascending) != len(keys):
        raise LengthMismatch("One ascending flag per key is required")
    columns = [t.column(k) for k in keys]
    if not keys or t.n_rows == 0:
        return t

    codes = backend.map(lambda c: _key_codes(c.values), columns)
    codes = [c if asc else c.max() - c for c, asc in zip(codes, ascending)]
    order = np.lexsort(tuple(reversed(codes)))
    return t.take(order)


AGG_FUNCTIONS = ("sum", "mean", "min", "max", "count", "std")


def _ordered_group_sums(sorted_values: np.ndarray, starts: np.ndarray, sizes: np.ndarray, backend: Backend) -> np.ndarray:
    """Left-to-right float sum of each contiguous group."""
    sums = np.zeros(len(starts), dtype=np.float64)
    if len(starts) == 0:
        return sums
    # bucket groups by size so each bucket is a padded matrix summed row-wise
    buckets = np.ceil(np.log2(np.maximum(sizes, 1))).astype(np.int64)
    tasks = []
    for b in np.unique(buckets):
        groups = np.flatnonzero(buckets == b)
        width = int(sizes[groups].max())
        step = len(groups)
        if backend.is_parallel:
            step = max(1, -(-len(groups) // (backend.workers * 4)))
        for i in range(0, len(groups), step):
            tasks.append((groups[i : i + step], width))

    def run(task):
        groups, width = task
        offsets = np.arange(width)
        index = starts[groups][:, None] + offsets[None, :]
        valid = offsets[None, :] < sizes[groups][:, None]
        matrix = np.where(valid, sorted_values[np.minimum(index, len(sorted_values) - 1)], 0.0)
        return groups, np.cumsum(matrix, axis=1)[np.arange(len(groups)), sizes[groups] - 1]

    for groups, values in backend.map(run, tasks):
        sums[groups] = values
    return sums


def _aggregate(
    values: np.ndarray, dtype: DType, fn: str, starts: np.ndarray, sizes: np.ndarray, backend: Backend
) -> Tuple[np.ndarray, DType]:
    if fn == "count":
        return sizes.astype(np.int64), DType.I64
    if fn == "min":
        return np.minimum.reduceat(values, starts) if len(starts) else values[:0], dtype
    if fn == "max":
        return np.maximum.reduceat(values, starts) if len(starts) else values[:0], dtype
    if fn == "sum" and dtype is not DType.F64:
        return (np.add.reduceat(values, starts) if len(starts) else values[:0]), dtype

    floats = values.astype(np.float64)
    sums = _ordered_group_sums(floats, starts, sizes, backend)
    if fn == "sum":
        return sums, DType.F64
    means = sums / sizes
    if fn == "mean":
        return means, DType.F64
    deviations = floats - np.repeat(means, sizes)
    return np.sqrt(_ordered_group_sums(deviations * deviations, starts, sizes, backend) / sizes), DType.F64


def group_aggregate(
    t: Table,
    keys: Sequence[str],
    aggs: Sequence[Tuple[str, str]],
    backend: Backend = SEQUENTIAL,
) -> Table:
    """
    One output row per distinct key tuple, sorted ascending by key.

    Aggregated columns are named ``<column>_<fn>``.

    :param t: Input table
    :param keys: Grouping columns
    :param aggs: (column, fn) pairs, fn in sum/mean/min/max/count/std
    :raises NoSuchColumn: If a column does not exist
    :raises TypeMismatch: If a non-count aggregation targets a non-numeric column
    :raises NanValue: If an aggregated f64 column contains NaN
    """
    key_columns = [t.column(k) for k in keys]
    agg_columns = []
    for name, fn in aggs:
        column = t.column(name)
        if fn not in AGG_FUNCTIONS:
            raise ValueError(f"Unknown aggregation: {fn}")
        if fn != "count" and not column.dtype.is_numeric:
            raise TypeMismatch(f"Cannot {fn} column {name} of type {column.dtype.value}")
        if fn != "count" and column.dtype is DType.F64 and np.isnan(column.values).any():
            raise NanValue(f"Column {name} contains NaN")
        agg_columns.append((column, fn))

    if key_columns:
        codes = backend.map(lambda c: _key_codes(c.values), key_columns)
        order = np.lexsort(tuple(reversed(codes))) if t.n_rows else np.zeros(0, dtype=np.int64)
        sorted_codes = np.stack([c[order] for c in codes]) if t.n_rows else np.zeros((len(codes), 0))
        changed = np.any(sorted_codes[:, 1:] != sorted_codes[:, :-1], axis=0)
        starts = np.concatenate([[0], np.flatnonzero(changed) + 1]) if t.n_rows else np.zeros(0, np.int64)
    else:
        order = np.arange(t.n_rows)
        starts = np.zeros(1 if t.n_rows else 0, dtype=np.int64)
    starts = starts.astype(np.int64)
    sizes = np.diff(np.append(starts, t.n_rows)).astype(np.int64)

    out = [Column(c.name, c.values[order][starts], c.dtype) for c in key_columns]
    for column, fn in agg_columns:
        values, dtype = _aggregate(column.values[order], column.dtype, fn, starts, sizes, backend)
        out.append(Column(f"{column.name}_{fn}", values, dtype))
    logging.debug(f"group_aggregate: {t.n_rows} rows -> {len(starts)} groups")
    return Table(out)


def merge(left: Table, right: Table, on: Sequence[str], how: str = "inner", backend: Backend = SEQUENTIAL) -> Table:
    """
    Inner join on equal key tuples.

    Output rows are ordered by (left row, right row). Right non-key columns
    whose names collide with a left column get the suffix ``_r``.

    :raises NoSuchColumn: If a key is missing on either side
    :raises TypeMismatch: If key dtypes differ
    """
    if how != "inner":
        raise ValueError(f"Unsupported join type: {how}")
    on = list(on)
    for k in on:
        lc, rc = left.column(k), right.column(k)
        if lc.dtype is not rc.dtype:
            raise TypeMismatch(f"Key {k} is {lc.dtype.value} on the left and {rc.dtype.value} on the right")

    n_left, n_right = left.n_rows, right.n_rows
    if n_left and n_right and on:
        per_key = []
        for k in on:
            both = np.concatenate([left[k], right[k]])
            per_key.append(_key_codes(both))
        _, composite = np.unique(np.stack(per_key, axis=1), axis=0, return_inverse=True)
        composite = composite.reshape(-1)
        left_codes, right_codes = composite[:n_left], composite[n_left:]
        right_order = np.argsort(right_codes, kind="stable")
        right_sorted = right_codes[right_order]

        def expand(r):
            i, j = r
            codes = left_codes[i:j]
            lo = np.searchsorted(right_sorted, codes, side="left")
            counts = np.searchsorted(right_sorted, codes, side="right") - lo
            left_idx = np.repeat(np.arange(i, j), counts)
            firsts = np.repeat(np.cumsum(counts) - counts, counts)
            right_idx = right_order[np.repeat(lo, counts) + np.arange(len(left_idx)) - firsts]
            return np.stack([left_idx, right_idx])

        pairs = _chunked(backend, n_left, lambda i, j: expand((i, j)).T)
        left_idx, right_idx = pairs[:, 0], pairs[:, 1]
    elif on:
        left_idx = right_idx = np.zeros(0, dtype=np.int64)
    else:
        left_idx = np.repeat(np.arange(n_left), n_right)
        right_idx = np.tile(np.arange(n_right), n_left)

    out = [c.take(left_idx) for c in left.columns()]
    for c in right.columns():
        if c.name in on:
            continue
        name = c.name + "_r" if c.name in left else c.name
        out.append(c.take(right_idx).rename(name))
    return Table(out)


# Operation names of the benchmark suite
OPERATIONS = (
    "group_aggregate",
    "sort",
    "filter",
    "merge",
    "vector_add",
    "in_place_multiply",
    "reduce_sum",
    "cumulative_sum",
    "scalar_compare",
)
