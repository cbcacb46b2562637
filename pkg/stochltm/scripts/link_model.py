"""
Per-link state of the stochastic link transmission model.

Each link carries two univariate boundary models:
- the UQ model, centred on the upstream queue (occupied spaces at entry)
- the DQ model, centred on the downstream queue (vehicles ready to leave)

Each model is a pair of finite birth-death chains driven by lag-delayed
expected flow rates and propagated exactly over every time interval. The
marginals used by the node model are convex mixtures of the two models.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError
from .probability_kernel import QueueDistribution, mix_distributions, propagate_birth_death

logger = logging.getLogger(__name__)

DIVISION_GUARD = 1e-12
NEGATIVE_RATE_WARNING = -1e-9
DEFAULT_WEIGHT_BOUNDS = (0.1, 0.9)


@dataclass(frozen=True)
class LinkParams:
    """
    Exogenous parameters of a single-lane link (triangular fundamental diagram).

    Attributes:
        length: Link length L [km]
        free_flow_speed: Forward wave speed v [km/s]
        backward_wave_speed: Backward wave speed w [km/s], negative
        jam_density: Jam density [veh/km]
        flow_capacity: Flow capacity q_hat [veh/s]
        service_rate: Downstream service rate mu [veh/s]
        entry_rate: Constant external entry rate gamma [veh/s], used when the
            scenario carries no demand profile for the link
        mixture_weight: Weight of the UQ model in the mixture marginals; None
            selects the default derived from the initial rates
    """

    length: float
    free_flow_speed: float
    backward_wave_speed: float
    jam_density: float
    flow_capacity: float
    service_rate: float
    entry_rate: float = 0.0
    mixture_weight: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.length > 0:
            raise ConfigurationError(f"length must be positive, got {self.length}")
        if not self.free_flow_speed > 0:
            raise ConfigurationError(f"free_flow_speed must be positive, got {self.free_flow_speed}")
        if not self.backward_wave_speed < 0:
            raise ConfigurationError(f"backward_wave_speed must be negative, got {self.backward_wave_speed}")
        if not self.jam_density > 0:
            raise ConfigurationError(f"jam_density must be positive, got {self.jam_density}")
        if not self.flow_capacity > 0:
            raise ConfigurationError(f"flow_capacity must be positive, got {self.flow_capacity}")
        if self.service_rate < 0 or self.entry_rate < 0:
            raise ConfigurationError("service_rate and entry_rate must be nonnegative")
        if self.mixture_weight is not None and not 0.0 <= self.mixture_weight <= 1.0:
            raise ConfigurationError(f"mixture_weight must lie in [0, 1], got {self.mixture_weight}")


@dataclass(frozen=True)
class LinkGeometry:
    space_capacity: int
    k_fwd: int
    k_bwd: int

    @property
    def window(self) -> int:
        """Number of past intervals the flow history must retain."""
        return max(self.k_fwd, self.k_bwd) + 2


def compute_geometry(params: LinkParams, delta: float) -> LinkGeometry:
    """Space capacity and forward/backward lags (in steps) of a link."""
    if not delta > 0:
        raise ValueError(f"time step must be positive, got {delta}")
    capacity = int(Decimal(repr(params.jam_density * params.length)).quantize(Decimal(1), rounding=ROUND_HALF_UP))
    if capacity < 1:
        raise ConfigurationError(
            f"link of length {params.length} km holds no vehicle at jam density {params.jam_density} veh/km"
        )
    k_fwd = _ceil_steps(params.length / (params.free_flow_speed * delta))
    k_bwd = _ceil_steps(params.length / (abs(params.backward_wave_speed) * delta))
    return LinkGeometry(space_capacity=capacity, k_fwd=max(1, k_fwd), k_bwd=max(1, k_bwd))


def _ceil_steps(value: float) -> int:
    # Ratios such as 0.055 / 0.001 land a hair above an integer in binary.
    rounded = round(value)
    if abs(value - rounded) < 1e-9:
        return int(rounded)
    return math.ceil(value)


class LagBuffer:
    """
    Ring buffer of per-interval rates together with their running cumulative sums.

    Index r addresses interval r; indices before 0 read as zero. Only the last
    `window` intervals are retained.
    """

    def __init__(self, window: int) -> None:
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = int(window)
        self._rates = np.zeros(self.window)
        self._cumulative = np.zeros(self.window)
        self._total = 0.0
        self.length = 0

    def append(self, rate: float) -> None:
        slot = self.length % self.window
        self._total += float(rate)
        self._rates[slot] = rate
        self._cumulative[slot] = self._total
        self.length += 1

    def _check(self, r: int) -> None:
        if r >= self.length:
            raise IndexError(f"interval {r} not recorded yet (length {self.length})")
        if r < self.length - self.window:
            raise IndexError(f"interval {r} fell out of the retained window of {self.window}")

    def rate(self, r: int) -> float:
        if r < 0:
            return 0.0
        self._check(r)
        return float(self._rates[r % self.window])

    def cumulative(self, r: int) -> float:
        """Sum of rates over intervals 0..r."""
        if r < 0:
            return 0.0
        self._check(r)
        return float(self._cumulative[r % self.window])


@dataclass
class FlowHistory:
    """Instantaneous inflow and outflow rates of a link per interval."""

    inflow: LagBuffer
    outflow: LagBuffer

    @classmethod
    def for_window(cls, window: int) -> "FlowHistory":
        return cls(inflow=LagBuffer(window), outflow=LagBuffer(window))

    def append(self, q_in: float, q_out: float) -> None:
        if q_in < 0 or q_out < 0:
            raise ValueError("flow rates must be nonnegative")
        self.inflow.append(q_in)
        self.outflow.append(q_out)

    @property
    def length(self) -> int:
        return self.inflow.length


@dataclass
class LinkState:
    """Mutable per-link state owned by the network loader."""

    link_id: str
    params: LinkParams
    geometry: LinkGeometry
    uq_from_uq_model: QueueDistribution
    dq_from_uq_model: QueueDistribution
    dq_from_dq_model: QueueDistribution
    uq_from_dq_model: QueueDistribution
    history: FlowHistory
    arrival_rate: float
    effective_service_rate: float
    mixture_weight: float
    # Boundary flows each univariate model generates on its own primary chain.
    uq_model_inflow: LagBuffer = field(repr=False)
    dq_model_outflow: LagBuffer = field(repr=False)

    @classmethod
    def empty(
        cls,
        link_id: str,
        params: LinkParams,
        geometry: LinkGeometry,
        *,
        arrival_rate: float,
        effective_service_rate: Optional[float] = None,
        mixture_weight: Optional[float] = None,
    ) -> "LinkState":
        """Empty link: point masses at zero, zero flows, initial rates."""
        mu_hat = params.service_rate if effective_service_rate is None else effective_service_rate
        weight = mixture_weight
        if weight is None:
            weight = params.mixture_weight
        if weight is None:
            weight = default_mixture_weight(arrival_rate, mu_hat)
        empty = QueueDistribution.point_mass(geometry.space_capacity)
        history = FlowHistory.for_window(geometry.window)
        history.append(0.0, 0.0)
        uq_inflow = LagBuffer(geometry.window)
        uq_inflow.append(0.0)
        dq_outflow = LagBuffer(geometry.window)
        dq_outflow.append(0.0)
        return cls(
            link_id=link_id,
            params=params,
            geometry=geometry,
            uq_from_uq_model=empty,
            dq_from_uq_model=empty,
            dq_from_dq_model=empty,
            uq_from_dq_model=empty,
            history=history,
            arrival_rate=arrival_rate,
            effective_service_rate=mu_hat,
            mixture_weight=weight,
            uq_model_inflow=uq_inflow,
            dq_model_outflow=dq_outflow,
        )

    def output_state_size(self) -> int:
        """Values retained for output: the two mixture marginals."""
        return 2 * (self.geometry.space_capacity + 1)


def default_mixture_weight(arrival_rate: float, service_rate: float) -> float:
    low, high = DEFAULT_WEIGHT_BOUNDS
    total = arrival_rate + service_rate
    if total <= 0:
        return 0.5
    return min(high, max(low, service_rate / total))


def expected_uq_rate(history: FlowHistory, k: int, k_bwd: int) -> float:
    """
    Expected-state rate of the upstream queue at interval k: inflows up to k-1
    minus outflows whose backward wave has reached the upstream end.
    """
    value = history.inflow.cumulative(k - 1) - history.outflow.cumulative(k - k_bwd - 1)
    return _clamped_rate(value, "UQ")


def expected_dq_rate(history: FlowHistory, k: int, k_fwd: int) -> float:
    """
    Expected-state rate of the downstream queue at interval k: inflows that
    have travelled the link minus outflows up to k-1.
    """
    value = history.inflow.cumulative(k - k_fwd - 1) - history.outflow.cumulative(k - 1)
    return _clamped_rate(value, "DQ")


def _clamped_rate(value: float, label: str) -> float:
    if value < NEGATIVE_RATE_WARNING:
        logger.warning("Negative expected %s rate %.3e clamped to 0", label, value)
    return max(0.0, value)


def _reconstructed_rate(target_flow: float, boundary_prob: float, cap: float) -> float:
    # rate * boundary_prob reproduces target_flow; rate 0 when the boundary is unreachable.
    if boundary_prob < DIVISION_GUARD:
        return 0.0
    return min(cap, target_flow / boundary_prob)


def step_univariate_uq(
    state: LinkState,
    k: int,
    arrival_rate: float,
    effective_service_rate: float,
    delta: float,
) -> Tuple[QueueDistribution, QueueDistribution]:
    """
    Advance the UQ model from interval k-1 to k.

    The primary UQ chain loses vehicles at the link's realized outflow
    delayed by k_bwd+1. The secondary DQ chain gains vehicles at the inflow
    this model's own UQ chain admitted, delayed by k_fwd+1 (`uq_model_inflow`),
    not the link's realized inflow; step_univariate_dq mirrors this with
    `dq_model_outflow`.

    Returns the new (uq_from_uq_model, dq_from_uq_model).
    """
    geometry = state.geometry
    q_hat = state.params.flow_capacity

    delayed_outflow = state.history.outflow.rate(k - geometry.k_bwd - 1)
    uq_dist = state.uq_from_uq_model
    d_uq = _reconstructed_rate(delayed_outflow, 1.0 - uq_dist.prob_empty(), q_hat)
    new_uq = propagate_birth_death(uq_dist, arrival_rate, d_uq, delta)

    delayed_inflow = state.uq_model_inflow.rate(k - geometry.k_fwd - 1)
    dq_dist = state.dq_from_uq_model
    b_dq = _reconstructed_rate(delayed_inflow, 1.0 - dq_dist.prob_full(), q_hat)
    new_dq = propagate_birth_death(dq_dist, b_dq, effective_service_rate, delta)
    return new_uq, new_dq


def step_univariate_dq(
    state: LinkState,
    k: int,
    arrival_rate: float,
    effective_service_rate: float,
    delta: float,
) -> Tuple[QueueDistribution, QueueDistribution]:
    """
    Advance the DQ model from interval k-1 to k.

    Returns the new (dq_from_dq_model, uq_from_dq_model).
    """
    geometry = state.geometry
    q_hat = state.params.flow_capacity

    delayed_inflow = state.history.inflow.rate(k - geometry.k_fwd - 1)
    dq_dist = state.dq_from_dq_model
    b_dq = _reconstructed_rate(delayed_inflow, 1.0 - dq_dist.prob_full(), q_hat)
    new_dq = propagate_birth_death(dq_dist, b_dq, effective_service_rate, delta)

    delayed_outflow = state.dq_model_outflow.rate(k - geometry.k_bwd - 1)
    uq_dist = state.uq_from_dq_model
    d_uq = _reconstructed_rate(delayed_outflow, 1.0 - uq_dist.prob_empty(), q_hat)
    new_uq = propagate_birth_death(uq_dist, arrival_rate, d_uq, delta)
    return new_dq, new_uq


def mixture_marginals(state: LinkState, weight: Optional[float] = None) -> Tuple[QueueDistribution, QueueDistribution]:
    """Marginal P(UQ(k)) and P(DQ(k)) as convex mixtures of the two univariate models."""
    w = state.mixture_weight if weight is None else weight
    p_uq = mix_distributions(state.uq_from_uq_model, state.uq_from_dq_model, w)
    p_dq = mix_distributions(state.dq_from_uq_model, state.dq_from_dq_model, w)
    return p_uq, p_dq


def instantaneous_flows(
    state: LinkState,
    arrival_rate: float,
    effective_service_rate: float,
    marginals: Tuple[QueueDistribution, QueueDistribution],
) -> Tuple[float, float]:
    """
    Expected inflow lambda*P(UQ<l) and outflow mu_hat*P(DQ>0) of the current
    interval, appended to the link's flow history.
    """
    p_uq, p_dq = marginals
    q_in = arrival_rate * (1.0 - p_uq.prob_full())
    q_out = effective_service_rate * (1.0 - p_dq.prob_empty())
    q_in = max(0.0, q_in)
    q_out = max(0.0, q_out)
    state.history.append(q_in, q_out)
    state.uq_model_inflow.append(max(0.0, arrival_rate * (1.0 - state.uq_from_uq_model.prob_full())))
    state.dq_model_outflow.append(max(0.0, effective_service_rate * (1.0 - state.dq_from_dq_model.prob_empty())))
    return q_in, q_out


def advance_link(state: LinkState, k: int, delta: float) -> None:
    """Run both univariate models for interval k with the rates committed at k-1."""
    lam = state.arrival_rate
    mu_hat = state.effective_service_rate
    new_uq, new_dq_u = step_univariate_uq(state, k, lam, mu_hat, delta)
    new_dq, new_uq_d = step_univariate_dq(state, k, lam, mu_hat, delta)
    state.uq_from_uq_model = new_uq
    state.dq_from_uq_model = new_dq_u
    state.dq_from_dq_model = new_dq
    state.uq_from_dq_model = new_uq_d
