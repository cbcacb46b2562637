"""
Registry of the scenario files shipped with the package.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List

from .errors import ConfigurationError
from .network_config import NetworkConfig, load_network_config


def scenarios_dir() -> Path:
    # repo_root/stochltm/scripts/scenarios.py -> repo_root/stochltm/scenarios
    return Path(__file__).resolve().parents[1] / "scenarios"


def bundled_scenarios() -> Dict[str, Path]:
    return {path.stem: path for path in sorted(scenarios_dir().glob("*.json"))}


def resolve_scenario_path(name_or_path: str) -> Path:
    """Accept a bundled scenario name or a path to a scenario file."""
    bundled = bundled_scenarios()
    if name_or_path in bundled:
        return bundled[name_or_path]
    path = Path(name_or_path).expanduser()
    if path.exists():
        return path
    raise ConfigurationError(
        f"scenario {name_or_path!r} is neither a file nor a bundled scenario ({', '.join(bundled)})"
    )


def load_scenario(name_or_path: str) -> NetworkConfig:
    return load_network_config(resolve_scenario_path(name_or_path))


def describe_scenarios() -> List[dict]:
    out = []
    for name, path in bundled_scenarios().items():
        config = load_network_config(path)
        out.append(
            {
                "name": name,
                "links": len(config.links),
                "nodes": len(config.nodes),
                "horizon_s": config.horizon,
                "delta_s": config.delta,
                "signals": config.signals is not None,
            }
        )
    return out
