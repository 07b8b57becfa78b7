#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Tests for node name parsing and rack localization"""

import json

import pytest

from perfslice.errors import ParseError
from perfslice.topology import (
    CongestionReport,
    TopoCoord,
    affected_racks,
    format_node_name,
    localize_outliers,
    parse_node_name,
    render_report,
)


def test_parse_node_name():
    assert parse_node_name("x4109c0s0b0n0") == TopoCoord(4109, 0, 0, 0, 0)
    assert parse_node_name("x1000c3s7b1n2") == TopoCoord(1000, 3, 7, 1, 2)


def test_format_inverts_parse():
    coord = TopoCoord(4122, 2, 5)
    assert format_node_name(coord) == "x4122c2s5b0n0"
    assert parse_node_name(format_node_name(coord)) == coord


@pytest.mark.parametrize(
    "name,offset",
    [
        ("", 0),
        ("y4109c0s0b0n0", 0),
        ("x4109c0s0b0", 11),
        ("xc0s0b0n0", 1),
        ("x4109c0s0b0n0-eth", 13),
        ("x4109c0sXb0n0", 8),
    ],
)
def test_parse_errors_carry_offset(name, offset):
    with pytest.raises(ParseError) as exc_info:
        parse_node_name(name)
    assert exc_info.value.offset == offset


def test_localize_groups_by_rack_and_chassis():
    allocation = [format_node_name(TopoCoord(rack, chassis, slot)) for rack in (4100, 4101) for chassis in (0, 1) for slot in range(4)]
    outliers = [format_node_name(TopoCoord(4100, 0, s)) for s in range(4)] + ["x4101c1s2b0n0"]

    report = localize_outliers(outliers, allocation)

    assert report.outliers == 5
    assert report.distinct_racks == 2
    assert report.rack_ids() == [4100, 4101]
    first, second = report.racks
    assert (first.nodes, first.chassis, first.full_chassis) == (4, [0], [0])
    assert (second.nodes, second.chassis, second.full_chassis) == (1, [1], [])


def test_localize_counts_duplicates_once():
    report = localize_outliers(["x4100c0s0b0n0", "x4100c0s0b0n0"], ["x4100c0s0b0n0", "x4100c0s1b0n0"])
    assert report.outliers == 1
    assert report.racks[0].full_chassis == []


def test_localize_without_outliers():
    report = localize_outliers([], ["x4100c0s0b0n0"])
    assert report.outliers == 0
    assert report.distinct_racks == 0


def test_localize_rejects_bad_names():
    with pytest.raises(ParseError):
        localize_outliers(["node17"], ["node17"])


def test_render_text():
    report = localize_outliers(["x4100c0s0b0n0", "x4100c0s1b0n0"], ["x4100c0s0b0n0", "x4100c0s1b0n0"])
    text = render_report(report, "text").decode("utf-8")
    assert text.splitlines() == [
        "2 outlier nodes across 1 racks",
        "rack 4100: 2 nodes, chassis 0 (fully affected: 0)",
    ]


def test_render_json_round_trip():
    report = localize_outliers(["x4100c0s0b0n0", "x4103c2s1b0n0"], ["x4100c0s0b0n0", "x4103c2s1b0n0", "x4103c2s2b0n0"])
    data = json.loads(render_report(report, "json"))
    assert CongestionReport.from_dict(data) == report


def test_render_unknown_format():
    with pytest.raises(ValueError):
        render_report(CongestionReport(0), "xml")


def test_affected_racks():
    assert affected_racks(["x4100c0s0b0n0", "x4100c1s0b0n0", "x4121c0s0b0n0"]) == {4100, 4121}
