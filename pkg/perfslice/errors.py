#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Exception hierarchy shared by all perfslice modules"""

from typing import Optional


class PerfSliceError(Exception):
    """Base class for every error raised by perfslice"""


# store


class InvalidImage(PerfSliceError, ValueError):
    """A DatabaseImage violates a type invariant and cannot be written"""


class FormatError(PerfSliceError, ValueError):
    """A database file has a bad magic, version or truncated index"""


class IoError(PerfSliceError, OSError):
    """Reading or writing database files failed"""


class NotFound(PerfSliceError, LookupError):
    """A profile, context, rank or model key does not exist"""


# synthgen / configuration


class InvalidConfig(PerfSliceError, ValueError):
    """A scenario or CLI configuration is invalid"""


# ingest


class NoSummary(PerfSliceError, LookupError):
    """The database has no summary profile (profile 0)"""


class DegenerateSummary(PerfSliceError, ValueError):
    """The summary profile has no total time to compare against"""


# query / topology


class ParseError(PerfSliceError, ValueError):
    """Malformed query expression or node name"""

    def __init__(self, message: str, offset: int, text: Optional[str] = None):
        self.offset = offset
        self.text = text
        if text is not None:
            message = f"{message} at offset {offset} in {text!r}"
        else:
            message = f"{message} at offset {offset}"
        super().__init__(message)


class NoSuchMetric(PerfSliceError, LookupError):
    """A query names a metric missing from the metadata"""


# frame


class NoSuchColumn(PerfSliceError, LookupError):
    """A table operation names a column the table does not have"""


class TypeMismatch(PerfSliceError, TypeError):
    """Column dtypes are incompatible with the requested operation"""


class LengthMismatch(PerfSliceError, ValueError):
    """Columns of different lengths were combined"""


class NanValue(PerfSliceError, ValueError):
    """NaN found in a column that is being aggregated"""


# itermodel


class DanglingContext(PerfSliceError, LookupError):
    """A trace event references a context missing from the tree"""


class NoPeriodicity(PerfSliceError, ValueError):
    """No context repeats regularly enough to serve as an anchor"""


class NoIterations(PerfSliceError, ValueError):
    """The anchor context is never entered in a trace"""


# diagnostics


class EmptyInput(PerfSliceError, ValueError):
    """A statistic was requested over no values"""


class UndefinedCV(PerfSliceError, ValueError):
    """Coefficient of variation requested for a zero-mean vector"""


class InsufficientData(PerfSliceError, ValueError):
    """Too few traces or iterations for a variance statistic"""


class InvalidTotal(PerfSliceError, ValueError):
    """The total application time must be positive"""


class InvalidK(PerfSliceError, ValueError):
    """K-Means cluster count outside 1..n"""


class InvalidEps(PerfSliceError, ValueError):
    """DBSCAN neighbourhood radius must be positive"""


# cli


class NoOutliers(PerfSliceError):
    """Clustering produced a single group, so there is nothing to localize"""
