#!/usr/bin/env python
# SPDX-License-Identifier: MIT
# Copyright 2026 Sony Group Corporation
# Author: R&D Center Europe Brussels Laboratory, Sony Group Corporation
# License: For licensing see the License.txt file


"""Command-line configuration: flags, environment and YAML config files"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml

from .errors import InvalidConfig
from .frame import Backend
from .ingest import DEFAULT_PRUNE_SHARE, PruneStrategy, default_parallelism, load_prune_patterns
from .store import ContextKind

ENV_JOBS = "PERFSLICE_JOBS"
BACKENDS = ("seq", "par")
FORMATS = ("csv", "json")
CONFIG_KEYS = ("jobs", "backend", "format", "prune_share", "drop_lines", "collapse", "prune_file", "seed")


@dataclass
class CliConfig:
    db: Optional[Path] = None
    jobs: int = field(default_factory=default_parallelism)
    backend: str = "par"
    fmt: str = "csv"
    prune_share: float = DEFAULT_PRUNE_SHARE
    drop_lines: bool = False
    collapse: List[str] = field(default_factory=list)
    prune_file: Optional[Path] = None
    seed: Optional[int] = None
    verbose: bool = False

    def validate(self) -> None:
        """
        :raises InvalidConfig: On an out-of-range or unknown setting
        """
        if not isinstance(self.jobs, int) or isinstance(self.jobs, bool) or self.jobs < 1:
            raise InvalidConfig(f"jobs must be an integer >= 1, got {self.jobs!r}")
        if self.backend not in BACKENDS:
            raise InvalidConfig(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.fmt not in FORMATS:
            raise InvalidConfig(f"format must be one of {FORMATS}, got {self.fmt!r}")
        if not isinstance(self.prune_share, (int, float)) or not self.prune_share >= 0:
            raise InvalidConfig(f"prune_share must be >= 0, got {self.prune_share!r}")

    @property
    def frame_backend(self) -> Backend:
        return Backend.from_name(self.backend, self.jobs)

    def strategies(self, with_share: bool = True) -> List[PruneStrategy]:
        """
        Prune strategies selected by the flags.

        :param with_share: Include the minimum inclusive-share strategy
        :raises InvalidConfig: If the prune file cannot be read
        """
        result = []
        if with_share and self.prune_share > 0:
            result.append(PruneStrategy.min_share(float(self.prune_share)))
        if self.drop_lines:
            result.append(PruneStrategy.drop(ContextKind.LINE))
        patterns = list(self.collapse)
        if self.prune_file is not None:
            patterns.extend(load_prune_patterns(self.prune_file))
        result.extend(PruneStrategy.collapse(p) for p in patterns)
        return result

    @classmethod
    def from_args(cls, args: Any, environ: Optional[Mapping[str, str]] = None) -> "CliConfig":
        """
        Merge settings: flag > ``PERFSLICE_JOBS`` > ``--config`` file > default.

        Flags left unset on the command line must be absent from ``args`` or
        None.

        :raises InvalidConfig: On invalid values or an unreadable config file
        """
        environ = os.environ if environ is None else environ
        values: Dict[str, Any] = {}

        config_path = getattr(args, "config", None)
        if config_path:
            values.update(load_config_file(config_path))

        env_jobs = environ.get(ENV_JOBS)
        if env_jobs:
            try:
                values["jobs"] = int(env_jobs)
            except ValueError:
                raise InvalidConfig(f"{ENV_JOBS} must be an integer, got {env_jobs!r}")

        for key in CONFIG_KEYS:
            flag = getattr(args, key, None)
            if flag is not None:
                values[key] = flag

        cfg = cls(verbose=bool(getattr(args, "verbose", False)))
        db = getattr(args, "db", None)
        if db:
            cfg.db = Path(db)
        if "jobs" in values:
            cfg.jobs = values["jobs"]
        if "backend" in values:
            cfg.backend = values["backend"]
        if "format" in values:
            cfg.fmt = values["format"]
        if "prune_share" in values:
            cfg.prune_share = values["prune_share"]
        if "drop_lines" in values:
            cfg.drop_lines = bool(values["drop_lines"])
        if "collapse" in values:
            collapse = values["collapse"]
            cfg.collapse = [collapse] if isinstance(collapse, str) else list(collapse)
        if values.get("prune_file"):
            cfg.prune_file = Path(values["prune_file"])
        if values.get("seed") is not None:
            cfg.seed = int(values["seed"])
        cfg.validate()
        logging.debug(f"Configuration: {cfg}")
        return cfg


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a YAML mapping of CLI settings.

    :raises InvalidConfig: If the file is unreadable, malformed or has unknown keys
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except OSError as e:
        raise InvalidConfig(f"Cannot read config file {path}: {e}")
    except yaml.YAMLError as e:
        raise InvalidConfig(f"Malformed config file {path}: {e}")
    if not isinstance(data, dict):
        raise InvalidConfig(f"Config file {path} must contain a mapping")
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise InvalidConfig(f"Unknown config keys in {path}: {', '.join(unknown)}")
    return data
