# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file

"""Setuptools shim for perfslice; metadata lives in pyproject.toml"""

from setuptools import setup

setup()
