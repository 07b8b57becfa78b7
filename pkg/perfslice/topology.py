#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Physical node names to interconnect coordinates, and outlier localization"""

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Set, Tuple

from .errors import ParseError

DIGITS = "0123456789"
FIELDS = "xcsbn"


@dataclass(frozen=True, order=True)
class TopoCoord:
    rack: int
    chassis: int
    slot: int
    blade: int = 0
    node: int = 0

    def __post_init__(self):
        for name in ("rack", "chassis", "slot", "blade", "node"):
            if getattr(self, name) < 0:
                raise ValueError(f"Coordinate {name} must be >= 0")


def parse_node_name(name: str) -> TopoCoord:
    """
    Parse ``x<rack>c<chassis>s<slot>b<blade>n<node>`` with decimal fields.

    :param name: Node hostname, e.g. ``x4109c0s0b0n0``
    :return: Parsed coordinates
    :raises ParseError: With the offset of the first offending character
    """
    values = []
    pos = 0
    for letter in FIELDS:
        if pos >= len(name) or name[pos] != letter:
            raise ParseError(f"Expected '{letter}'", pos, name)
        pos += 1
        start = pos
        while pos < len(name) and name[pos] in DIGITS:
            pos += 1
        if pos == start:
            raise ParseError(f"Expected decimal digits after '{letter}'", pos, name)
        values.append(int(name[start:pos]))
    if pos != len(name):
        raise ParseError("Unexpected trailing characters", pos, name)
    return TopoCoord(*values)


def format_node_name(coord: TopoCoord) -> str:
    return f"x{coord.rack}c{coord.chassis}s{coord.slot}b{coord.blade}n{coord.node}"


@dataclass
class RackSummary:
    rack: int
    nodes: int
    chassis: List[int] = field(default_factory=list)
    full_chassis: List[int] = field(default_factory=list)


@dataclass
class CongestionReport:
    """Outlier nodes grouped by rack, with chassis coverage"""

    outliers: int
    racks: List[RackSummary] = field(default_factory=list)

    @property
    def distinct_racks(self) -> int:
        return len(self.racks)

    def rack_ids(self) -> List[int]:
        return [r.rack for r in self.racks]

    def to_dict(self) -> dict:
        return {
            "outliers": self.outliers,
            "racks": [
                {
                    "rack": r.rack,
                    "nodes": r.nodes,
                    "chassis": list(r.chassis),
                    "full_chassis": list(r.full_chassis),
                }
                for r in self.racks
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CongestionReport":
        return cls(
            outliers=int(data["outliers"]),
            racks=[
                RackSummary(
                    rack=int(r["rack"]),
                    nodes=int(r["nodes"]),
                    chassis=[int(c) for c in r["chassis"]],
                    full_chassis=[int(c) for c in r["full_chassis"]],
                )
                for r in data["racks"]
            ],
        )


def localize_outliers(
    outlier_hostnames: Iterable[str], all_hostnames: Iterable[str]
) -> CongestionReport:
    """
    Map outlier nodes to racks and chassis.

    A chassis is fully affected when every node of it seen in
    ``all_hostnames`` is an outlier.

    :param outlier_hostnames: Hostnames of the outlier nodes
    :param all_hostnames: Every hostname of the allocation
    :return: Report with racks sorted by id
    :raises ParseError: If any hostname does not parse
    """
    outliers = {name: parse_node_name(name) for name in set(outlier_hostnames)}
    population: Dict[Tuple[int, int], int] = {}
    for name in set(all_hostnames) | set(outliers):
        coord = outliers.get(name) or parse_node_name(name)
        key = (coord.rack, coord.chassis)
        population[key] = population.get(key, 0) + 1

    per_rack: Dict[int, int] = {}
    per_chassis: Dict[Tuple[int, int], int] = {}
    for coord in outliers.values():
        per_rack[coord.rack] = per_rack.get(coord.rack, 0) + 1
        key = (coord.rack, coord.chassis)
        per_chassis[key] = per_chassis.get(key, 0) + 1

    racks = []
    for rack in sorted(per_rack):
        chassis = sorted(c for (r, c) in per_chassis if r == rack)
        full = [c for c in chassis if per_chassis[(rack, c)] == population[(rack, c)]]
        racks.append(RackSummary(rack=rack, nodes=per_rack[rack], chassis=chassis, full_chassis=full))

    report = CongestionReport(outliers=len(outliers), racks=racks)
    logging.debug(f"Localized {report.outliers} outlier nodes to {report.distinct_racks} racks")
    return report


def _plural(count: int, word: str) -> str:
    return f"{count} {word}" if count == 1 else f"{count} {word}s"


def render_report(report: CongestionReport, fmt: str = "text") -> bytes:
    """
    Render a report as JSON or as text with one line per rack.

    :param report: Report to render
    :param fmt: ``json`` or ``text``
    :return: UTF-8 encoded document
    """
    if fmt == "json":
        return (json.dumps(report.to_dict(), indent=2) + "\n").encode("utf-8")
    if fmt != "text":
        raise ValueError(f"Unknown report format: {fmt}")

    lines = [f"{report.outliers} outlier nodes across {report.distinct_racks} racks"]
    for r in report.racks:
        line = f"rack {r.rack}: {_plural(r.nodes, 'node')}, chassis {','.join(map(str, r.chassis))}"
        if r.full_chassis:
            line += f" (fully affected: {','.join(map(str, r.full_chassis))})"
        lines.append(line)
    return ("\n".join(lines) + "\n").encode("utf-8")


def affected_racks(hostnames: Iterable[str]) -> Set[int]:
    return {parse_node_name(h).rack for h in hostnames}
