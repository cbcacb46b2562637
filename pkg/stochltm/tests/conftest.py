from pathlib import Path
from typing import Dict, Optional

import pytest

from stochltm.scripts.link_model import LinkParams
from stochltm.scripts.network_config import DemandSegment, NetworkConfig, load_network_config

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"


def table_link(service_rate: float = 0.4, entry_rate: float = 0.0, mixture_weight: Optional[float] = None) -> LinkParams:
    """Single-lane 50 m link: capacity 10, lags of 5 s forward and 10 s backward."""
    return LinkParams(
        length=0.05,
        free_flow_speed=0.01,
        backward_wave_speed=-0.005,
        jam_density=200.0,
        flow_capacity=0.67,
        service_rate=service_rate,
        entry_rate=entry_rate,
        mixture_weight=mixture_weight,
    )


def single_link_config(
    entry_rate: float,
    service_rate: float,
    *,
    horizon: float = 60.0,
    delta: float = 0.5,
    stride: float = 5.0,
) -> NetworkConfig:
    return NetworkConfig(
        links={"1": table_link(service_rate=service_rate, entry_rate=entry_rate)},
        nodes=(),
        demand={},
        delta=delta,
        horizon=horizon,
        output_stride=stride,
        name="single",
    )


def constant_demand(rates: Dict[str, float], horizon: float) -> Dict[str, tuple]:
    return {link_id: (DemandSegment(0.0, horizon, rate),) for link_id, rate in rates.items()}


@pytest.fixture
def tiny_merge() -> NetworkConfig:
    return load_network_config(FIXTURES / "tiny_merge.json")


@pytest.fixture
def tiny_signal() -> NetworkConfig:
    return load_network_config(FIXTURES / "tiny_signal.json")


@pytest.fixture
def tiny_merge_path() -> Path:
    return FIXTURES / "tiny_merge.json"


@pytest.fixture
def tiny_signal_path() -> Path:
    return FIXTURES / "tiny_signal.json"
