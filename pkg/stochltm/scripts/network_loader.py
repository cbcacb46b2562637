"""
Network loading over a whole scenario.

Provides:
- run_loading: the stochastic network model (link models coupled through node models)
- run_deterministic_baseline: a deterministic link transmission model on cumulative counts

Each interval runs in three phases: every link advances its univariate models
with the rates committed at the previous interval (phase A), every node turns
the resulting boundary snapshot into transmission probabilities and rates
(phase B), and the new rates and flows are committed (phase C).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Tuple

import numpy as np

from .link_model import (
    LinkState,
    advance_link,
    compute_geometry,
    expected_dq_rate,
    expected_uq_rate,
    instantaneous_flows,
    mixture_marginals,
)
from .network_config import NetworkConfig, require_runnable
from .node_model import BoundarySnapshot, LinkBoundary, evaluate_node
from .probability_kernel import QueueDistribution

logger = logging.getLogger(__name__)

COUPLINGS = ("network", "marginal")
MASS_BALANCE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class TrajectoryRecord:
    """
    State of one link at one output time.

    Attributes:
        time_s: Output time [s]
        link_id: Link identifier
        e_uq, e_dq: Expected upstream and downstream queue lengths [veh]
        p_uq_full: P(UQ = l)
        p_dq_empty: P(DQ = 0)
        q_in, q_out: Expected inflow and outflow rates [veh/s]
        arrival_rate: lambda [veh/s]
        effective_service_rate: mu_hat [veh/s]
    """

    time_s: float
    link_id: str
    e_uq: float
    e_dq: float
    p_uq_full: float
    p_dq_empty: float
    q_in: float
    q_out: float
    arrival_rate: float
    effective_service_rate: float


class NetworkLoader:
    """Stateful driver of the stochastic network model for one scenario."""

    def __init__(self, config: NetworkConfig, *, coupling: str = "network") -> None:
        if coupling not in COUPLINGS:
            raise ValueError(f"coupling must be one of {COUPLINGS}, got {coupling!r}")
        require_runnable(config)
        self.config = config
        self.coupling = coupling
        self.delta = config.delta
        self.states: Dict[str, LinkState] = {}
        for link_id, params in config.links.items():
            geometry = compute_geometry(params, config.delta)
            self.states[link_id] = LinkState.empty(
                link_id,
                params,
                geometry,
                arrival_rate=config.entry_rate(link_id, 0.0),
            )
        self.marginals: Dict[str, Tuple[QueueDistribution, QueueDistribution]] = {
            link_id: mixture_marginals(state) for link_id, state in self.states.items()
        }
        self.service_rates = {link_id: params.service_rate for link_id, params in config.links.items()}
        self.k = 0

    def retained_output_values(self) -> int:
        return sum(state.output_state_size() for state in self.states.values())

    def records(self) -> List[TrajectoryRecord]:
        """Records of every link at the current interval."""
        time_s = round(self.k * self.delta, 9)
        out = []
        for link_id, state in self.states.items():
            p_uq, p_dq = self.marginals[link_id]
            out.append(
                TrajectoryRecord(
                    time_s=time_s,
                    link_id=link_id,
                    e_uq=p_uq.mean(),
                    e_dq=p_dq.mean(),
                    p_uq_full=p_uq.prob_full(),
                    p_dq_empty=p_dq.prob_empty(),
                    q_in=state.history.inflow.rate(self.k),
                    q_out=state.history.outflow.rate(self.k),
                    arrival_rate=state.arrival_rate,
                    effective_service_rate=state.effective_service_rate,
                )
            )
        return out

    def _snapshot(self, k: int) -> BoundarySnapshot:
        links = {}
        for link_id, state in self.states.items():
            p_uq, p_dq = self.marginals[link_id]
            links[link_id] = LinkBoundary(
                capacity=state.geometry.space_capacity,
                p_dq_empty=p_dq.prob_empty(),
                p_uq_full=p_uq.prob_full(),
                q_dq=expected_dq_rate(state.history, k, state.geometry.k_fwd),
                q_uq=expected_uq_rate(state.history, k, state.geometry.k_bwd),
            )
        return BoundarySnapshot(links)

    def _node_rates(
        self, snapshot: BoundarySnapshot, entry_rates: Mapping[str, float]
    ) -> Tuple[Dict[str, float], Dict[str, float], Dict[str, float], Dict[str, float]]:
        arrival = dict(entry_rates)
        effective = dict(self.service_rates)
        node_in: Dict[str, float] = {}
        node_out: Dict[str, float] = {}
        for node in self.config.nodes:
            if self.coupling == "marginal":
                for j in node.downstream:
                    arrival[j] = entry_rates[j] + math.fsum(
                        node.p(i, j) * self.service_rates[i] * (1.0 - snapshot[i].p_dq_empty) for i in node.upstream
                    )
                continue
            rates = evaluate_node(node, snapshot, self.service_rates, entry_rates, self.delta)
            arrival.update(rates.arrival_rates)
            effective.update(rates.effective_service_rates)
            node_in.update(rates.inflows)
            node_out.update(rates.outflows)
        return arrival, effective, node_in, node_out

    def step(self) -> None:
        """Advance the whole network by one interval."""
        k = self.k + 1
        # Phase A: link models with the rates committed at k-1.
        for link_id, state in self.states.items():
            advance_link(state, k, self.delta)
            self.marginals[link_id] = mixture_marginals(state)

        # Phase B: node models on the synchronized snapshot.
        snapshot = self._snapshot(k)
        t = k * self.delta
        entry_rates = {link_id: self.config.entry_rate(link_id, t) for link_id in self.states}
        arrival, effective, node_in, node_out = self._node_rates(snapshot, entry_rates)

        # Phase C: commit rates and flows.
        for link_id, state in self.states.items():
            state.arrival_rate = arrival[link_id]
            state.effective_service_rate = effective[link_id]
            q_in, q_out = instantaneous_flows(state, state.arrival_rate, state.effective_service_rate, self.marginals[link_id])
            if link_id in node_in and abs(node_in[link_id] - q_in) > MASS_BALANCE_TOLERANCE:
                logger.warning("Node inflow %.6g disagrees with link %s inflow %.6g at t=%.1f", node_in[link_id], link_id, q_in, t)
            if link_id in node_out and abs(node_out[link_id] - q_out) > MASS_BALANCE_TOLERANCE:
                logger.warning("Node outflow %.6g disagrees with link %s outflow %.6g at t=%.1f", node_out[link_id], link_id, q_out, t)
        self.k = k

    def run(self) -> Iterator[TrajectoryRecord]:
        steps = self.config.steps()
        stride = self.config.stride_steps()
        logger.info(
            "Loading %s: %d links, %d nodes, %d intervals (%s coupling)",
            self.config.name or "scenario",
            len(self.states),
            len(self.config.nodes),
            steps,
            self.coupling,
        )
        yield from self.records()
        while self.k < steps:
            self.step()
            if self.k % stride == 0:
                yield from self.records()
        logger.info("Loading %s finished", self.config.name or "scenario")


def run_loading(config: NetworkConfig, *, coupling: str = "network") -> Iterator[TrajectoryRecord]:
    """Stream trajectory records of the stochastic network model every output stride."""
    return NetworkLoader(config, coupling=coupling).run()


def retained_output_values(config: NetworkConfig) -> int:
    """Number of probability values the model keeps per link for output, summed over links."""
    return NetworkLoader(config).retained_output_values()


@dataclass(frozen=True)
class CumulativeCountRecord:
    time_s: float
    link_id: str
    c_up: float
    c_down: float

    @property
    def vehicles(self) -> float:
        return self.c_up - self.c_down


def run_deterministic_baseline(config: NetworkConfig) -> List[CumulativeCountRecord]:
    """
    Deterministic link transmission model on cumulative vehicle counts.

    Sending flow is what has travelled the link, capped by mu*delta; receiving
    flow is the space released by the backward wave, capped by q_hat*delta.
    When receiving flows bind, a node scales every upstream sending flow by the
    tightest ratio over the links it feeds, so vehicles leave each link in order.
    """
    require_runnable(config)
    delta = config.delta
    steps = config.steps()
    stride = config.stride_steps()
    link_ids = config.link_ids()
    geometry = {link_id: compute_geometry(config.links[link_id], delta) for link_id in link_ids}
    c_up = {link_id: np.zeros(steps + 1) for link_id in link_ids}
    c_down = {link_id: np.zeros(steps + 1) for link_id in link_ids}

    def lagged(series: np.ndarray, index: int) -> float:
        return float(series[index]) if index >= 0 else 0.0

    for k in range(steps):
        sending = {}
        receiving = {}
        for link_id in link_ids:
            g = geometry[link_id]
            params = config.links[link_id]
            sending[link_id] = max(
                0.0, min(lagged(c_up[link_id], k + 1 - g.k_fwd) - c_down[link_id][k], params.service_rate * delta)
            )
            receiving[link_id] = max(
                0.0,
                min(
                    lagged(c_down[link_id], k + 1 - g.k_bwd) + g.space_capacity - c_up[link_id][k],
                    params.flow_capacity * delta,
                ),
            )

        entering = {link_id: config.entry_rate(link_id, k * delta) * delta for link_id in link_ids}
        demand = dict(entering)
        for node in config.nodes:
            for j in node.downstream:
                demand[j] += math.fsum(node.p(i, j) * sending[i] for i in node.upstream)
        ratio = {
            link_id: (min(1.0, receiving[link_id] / demand[link_id]) if demand[link_id] > 0 else 1.0)
            for link_id in link_ids
        }

        inflow = {link_id: ratio[link_id] * entering[link_id] for link_id in link_ids}
        outflow = {}
        for link_id in link_ids:
            node = config.exit_node(link_id)
            scale = 1.0
            if node is not None:
                for j in node.downstream:
                    if node.p(link_id, j) > 0:
                        scale = min(scale, ratio[j])
                for j in node.downstream:
                    inflow[j] += scale * node.p(link_id, j) * sending[link_id]
            outflow[link_id] = scale * sending[link_id]

        for link_id in link_ids:
            c_up[link_id][k + 1] = c_up[link_id][k] + inflow[link_id]
            c_down[link_id][k + 1] = c_down[link_id][k] + outflow[link_id]

    records = []
    for k in range(0, steps + 1, stride):
        for link_id in link_ids:
            records.append(
                CumulativeCountRecord(
                    time_s=round(k * delta, 9),
                    link_id=link_id,
                    c_up=float(c_up[link_id][k]),
                    c_down=float(c_down[link_id][k]),
                )
            )
    return records
