"""
Runtime defaults for local runs, read from the environment.

A `.env` file in the working directory is honoured. CLI flags override
every value here.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Mapping, Optional

from dotenv import load_dotenv

from .validators import validate_log_level, validate_replications, validate_seed, validate_workers


@dataclass
class RuntimeConfig:
    workers: int = 1
    seed: int = 0
    replications: int = 1000
    output_dir: str = ".stochltm/runs"
    log_level: str = "INFO"


def load_runtime_config(environ: Optional[Mapping[str, str]] = None, *, use_dotenv: bool = True) -> RuntimeConfig:
    """Build a RuntimeConfig from STOCHLTM_* variables, falling back to the dataclass defaults."""
    if environ is None:
        if use_dotenv:
            load_dotenv(override=False)
        environ = os.environ
    defaults = RuntimeConfig()
    return RuntimeConfig(
        workers=validate_workers(environ.get("STOCHLTM_WORKERS", defaults.workers)),
        seed=validate_seed(environ.get("STOCHLTM_SEED", defaults.seed)),
        replications=validate_replications(environ.get("STOCHLTM_REPLICATIONS", defaults.replications)),
        output_dir=str(environ.get("STOCHLTM_OUTPUT_DIR", defaults.output_dir) or defaults.output_dir),
        log_level=validate_log_level(environ.get("STOCHLTM_LOG_LEVEL", defaults.log_level)),
    )
