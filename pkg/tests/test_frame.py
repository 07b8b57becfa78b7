#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Tests for the columnar engine and its sequential/parallel backends"""

import numpy as np
import pytest

from perfslice import frame
from perfslice.errors import LengthMismatch, NanValue, NoSuchColumn, TypeMismatch
from perfslice.frame import Backend, Column, DType, Table

SEQ = Backend.sequential()
PAR = Backend.parallel(4)


@pytest.fixture
def people():
    return Table.from_columns(
        {
            "host": np.array(["b", "a", "b", "c", "a"], dtype=object),
            "rank": np.array([3, 0, 4, 9, 1], dtype=np.int64),
            "time": np.array([2.0, 1.0, 4.0, 0.5, 3.0]),
        }
    )


def large_table(n: int = 200_000, seed: int = 5) -> Table:
    rng = np.random.default_rng(seed)
    return Table.from_columns(
        {
            "key": rng.integers(0, 997, size=n, dtype=np.int64),
            "x": rng.standard_normal(n),
            "y": rng.standard_normal(n),
        }
    )


# ============================================================================
# TABLE BASICS
# ============================================================================


def test_columns_are_typed_and_immutable(people):
    assert people.schema() == {"host": DType.STR, "rank": DType.I64, "time": DType.F64}
    assert len(people) == 5
    with pytest.raises(ValueError):
        people["time"][0] = 9.0


def test_missing_column(people):
    with pytest.raises(NoSuchColumn):
        people.column("nope")


def test_unequal_lengths():
    with pytest.raises(LengthMismatch):
        Table([Column("a", [1, 2]), Column("b", [1.0])])


def test_concat_requires_same_schema(people):
    doubled = Table.concat([people, people])
    assert len(doubled) == 10
    with pytest.raises(TypeMismatch):
        Table.concat([people, people.select(["rank"])])


def test_to_csv(people):
    text = people.select(["host", "time"]).to_csv()
    assert text.split("\r\n")[:3] == ["host,time", "b,2.0", "a,1.0"]


def test_empty_table_from_schema():
    t = Table.empty({"a": DType.I64, "b": DType.STR})
    assert len(t) == 0
    assert t.to_records() == []
    assert t.to_csv() == "a,b\r\n"


# ============================================================================
# COLUMN OPERATIONS
# ============================================================================


def test_vector_add_and_multiply():
    a, b = Column("a", [1.0, 2.0]), Column("b", [0.5, 0.25])
    assert frame.vector_add(a, b).values.tolist() == [1.5, 2.25]
    scaled = frame.in_place_multiply(a, 3.0)
    assert scaled.values.tolist() == [3.0, 6.0]
    assert a.values.tolist() == [1.0, 2.0]


def test_vector_add_type_and_length_checks():
    with pytest.raises(TypeMismatch):
        frame.vector_add(Column("a", [1, 2]), Column("b", [1.0, 2.0]))
    with pytest.raises(LengthMismatch):
        frame.vector_add(Column("a", [1.0]), Column("b", [1.0, 2.0]))


def test_reduce_sum_equals_last_prefix():
    x = large_table(50_000)["x"]
    column = Column("x", x)
    for backend in (SEQ, PAR):
        prefix = frame.cumulative_sum(column, backend).values
        assert frame.reduce_sum(column, backend) == prefix[-1]
    assert frame.reduce_sum(Column("x", np.zeros(0))) == 0.0


def test_cumulative_sum_small():
    assert frame.cumulative_sum(Column("x", [1.0, 2.0, 3.0])).values.tolist() == [1.0, 3.0, 6.0]


def test_scalar_compare():
    c = Column("x", [1.0, 2.0, 3.0])
    assert frame.scalar_compare(c, ">=", 2).values.tolist() == [False, True, True]
    assert frame.scalar_compare(c, "≠", 2.0).values.tolist() == [True, False, True]
    with pytest.raises(TypeMismatch):
        frame.scalar_compare(c, "<", "2")
    with pytest.raises(ValueError):
        frame.scalar_compare(c, "~", 2.0)


# ============================================================================
# TABLE OPERATIONS
# ============================================================================


def test_filter_keeps_order(people):
    out = frame.filter_rows(people, ("time", ">", 1.5))
    assert out["rank"].tolist() == [3, 4, 1]
    with pytest.raises(TypeMismatch):
        frame.filter_rows(people, ("host", "==", 1))


def test_sort_is_stable_and_multi_key(people):
    out = frame.sort(people, ["host", "time"], [True, False])
    assert out["host"].tolist() == ["a", "a", "b", "b", "c"]
    assert out["time"].tolist() == [3.0, 1.0, 4.0, 2.0, 0.5]
    with pytest.raises(LengthMismatch):
        frame.sort(people, ["host"], [True, False])


def test_group_aggregate(people):
    out = frame.group_aggregate(people, ["host"], [("time", "sum"), ("time", "mean"), ("rank", "count"), ("rank", "max")])
    assert out.column_names == ["host", "time_sum", "time_mean", "rank_count", "rank_max"]
    assert out["host"].tolist() == ["a", "b", "c"]
    assert out["time_sum"].tolist() == [4.0, 6.0, 0.5]
    assert out["time_mean"].tolist() == [2.0, 3.0, 0.5]
    assert out["rank_count"].tolist() == [2, 2, 1]
    assert out["rank_max"].tolist() == [1, 4, 9]


def test_group_aggregate_std():
    t = Table.from_columns({"k": [1, 1, 1, 1], "v": [2.0, 4.0, 4.0, 6.0]})
    out = frame.group_aggregate(t, ["k"], [("v", "std")])
    assert out["v_std"].tolist() == pytest.approx([np.sqrt(2.0)])


def test_group_aggregate_rejects_nan_and_strings(people):
    with pytest.raises(NanValue):
        frame.group_aggregate(Table.from_columns({"k": [1], "v": [np.nan]}), ["k"], [("v", "sum")])
    with pytest.raises(TypeMismatch):
        frame.group_aggregate(people, ["rank"], [("host", "sum")])


def test_group_aggregate_empty():
    t = Table.empty({"k": DType.I64, "v": DType.F64})
    out = frame.group_aggregate(t, ["k"], [("v", "sum")])
    assert len(out) == 0
    assert out.column_names == ["k", "v_sum"]


def test_merge_inner(people):
    hosts = Table.from_columns({"host": np.array(["a", "b", "d"], dtype=object), "rack": [4100, 4101, 4102]})
    out = frame.merge(people, hosts, ["host"])
    assert out.column_names == ["host", "rank", "time", "rack"]
    assert out["rank"].tolist() == [3, 0, 4, 1]
    assert out["rack"].tolist() == [4101, 4100, 4101, 4100]


def test_merge_duplicates_and_suffix():
    left = Table.from_columns({"k": [1, 2], "v": [1.0, 2.0]})
    right = Table.from_columns({"k": [1, 1, 3], "v": [10.0, 20.0, 30.0]})
    out = frame.merge(left, right, ["k"])
    assert out.column_names == ["k", "v", "v_r"]
    assert out["v_r"].tolist() == [10.0, 20.0]


def test_merge_key_type_mismatch():
    with pytest.raises(TypeMismatch):
        frame.merge(Table.from_columns({"k": [1]}), Table.from_columns({"k": [1.0]}), ["k"])


# ============================================================================
# BACKEND EQUIVALENCE
# ============================================================================


class TestBackendEquivalence:
    """Sequential and parallel backends give bit-identical results"""

    def setup_method(self):
        self.t = large_table()

    def test_group_aggregate(self):
        aggs = [("x", "sum"), ("x", "mean"), ("y", "std"), ("y", "min"), ("key", "count")]
        seq = frame.group_aggregate(self.t, ["key"], aggs, SEQ)
        par = frame.group_aggregate(self.t, ["key"], aggs, PAR)
        assert seq.equals(par)

    def test_sort(self):
        assert frame.sort(self.t, ["key", "x"], True, SEQ).equals(frame.sort(self.t, ["key", "x"], True, PAR))

    def test_filter(self):
        assert frame.filter_rows(self.t, ("x", ">", 0.0), SEQ).equals(frame.filter_rows(self.t, ("x", ">", 0.0), PAR))

    def test_merge(self):
        keys = np.unique(self.t["key"])
        right = Table.from_columns({"key": keys, "w": keys * 0.5})
        assert frame.merge(self.t, right, ["key"], backend=SEQ).equals(frame.merge(self.t, right, ["key"], backend=PAR))

    def test_scans(self):
        x = self.t.column("x")
        assert frame.cumulative_sum(x, SEQ).equals(frame.cumulative_sum(x, PAR))
        assert frame.reduce_sum(x, SEQ) == frame.reduce_sum(x, PAR)
        assert frame.vector_add(x, self.t.column("y"), SEQ).equals(frame.vector_add(x, self.t.column("y"), PAR))
        assert frame.in_place_multiply(x, 1.5, SEQ).equals(frame.in_place_multiply(x, 1.5, PAR))

    def test_backend_names(self):
        assert Backend.from_name("seq", 8) == SEQ
        assert Backend.from_name("par", 4) == PAR
        with pytest.raises(ValueError):
            Backend.from_name("gpu")


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("workers", [2, 3, 8])
def test_backends_agree_across_seeds(seed, workers):
    rng = np.random.default_rng(seed)
    t = large_table(n=int(rng.integers(1, 60_000)), seed=seed)
    par = Backend.parallel(workers)
    aggs = [("x", "sum"), ("x", "mean"), ("y", "std"), ("y", "max"), ("key", "count")]
    assert frame.group_aggregate(t, ["key"], aggs, SEQ).equals(frame.group_aggregate(t, ["key"], aggs, par))
    assert frame.sort(t, ["key", "y"], [False, True], SEQ).equals(frame.sort(t, ["key", "y"], [False, True], par))
    threshold = float(rng.standard_normal())
    assert frame.filter_rows(t, ("x", "<=", threshold), SEQ).equals(frame.filter_rows(t, ("x", "<=", threshold), par))
    keys = np.unique(rng.integers(0, 997, size=300, dtype=np.int64))
    right = Table.from_columns({"key": keys, "w": keys * 2.0})
    assert frame.merge(t, right, ["key"], backend=SEQ).equals(frame.merge(t, right, ["key"], backend=par))
    x = t.column("x")
    assert frame.cumulative_sum(x, SEQ).equals(frame.cumulative_sum(x, par))
    assert frame.reduce_sum(x, SEQ) == frame.reduce_sum(x, par)
