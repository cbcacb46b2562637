"""
Exception types shared across the loading models, the simulator and the CLI.
"""

from __future__ import annotations


class ConfigurationError(ValueError):
    """A scenario or control configuration that cannot be run as given."""


class SimulationError(RuntimeError):
    """Internal inconsistency detected by the event simulator."""
