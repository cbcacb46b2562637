"""
Input validators used across CLI and runtime configuration.
"""

from __future__ import annotations

import logging
import math
from typing import Union

Number = Union[int, float, str]

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def _as_int(value: Number, name: str) -> int:
    try:
        data = int(str(value).strip())
    except (TypeError, ValueError):
        raise ValueError(f"Invalid {name}: expected an integer, got {value!r}.") from None
    return data


def validate_seed(value: Number) -> int:
    data = _as_int(value, "seed")
    if data < 0:
        raise ValueError("Invalid seed. Expected a nonnegative integer.")
    return data


def validate_replications(value: Number, *, minimum: int = 1) -> int:
    data = _as_int(value, "replications")
    if data < minimum:
        raise ValueError(f"Invalid replications. Expected at least {minimum}.")
    return data


def validate_workers(value: Number) -> int:
    data = _as_int(value, "workers")
    if data < 1:
        raise ValueError("Invalid workers. Expected at least 1.")
    return data


def validate_budget(value: Number) -> int:
    data = _as_int(value, "budget")
    if data < 1:
        raise ValueError("Invalid budget. Expected at least 1 evaluation.")
    return data


def validate_weight(value: Number) -> float:
    try:
        data = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"Invalid weight: expected a number, got {value!r}.") from None
    if not 0.0 <= data <= 1.0:
        raise ValueError("Invalid weight. Allowed range is [0, 1].")
    return data


def validate_positive_seconds(value: Number, name: str = "duration") -> float:
    try:
        data = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"Invalid {name}: expected seconds, got {value!r}.") from None
    if not math.isfinite(data) or data <= 0:
        raise ValueError(f"Invalid {name}. Expected a positive number of seconds.")
    return data


def validate_log_level(value: str) -> str:
    data = str(value or "").strip().upper()
    if data not in LOG_LEVELS:
        raise ValueError(f"Invalid log level. Allowed: {', '.join(LOG_LEVELS)}.")
    return data


def log_level_number(value: str) -> int:
    return getattr(logging, validate_log_level(value))
