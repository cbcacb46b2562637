"""
Stochastic node model coupling the links that meet at a node.

The flow transmission probability P(DQ_i>0, UQ_n<l_n for all n in N) is
expanded by inclusion-exclusion over the blocking events {DQ_i=0} and
{UQ_n=l_n}. Single events are read from the link marginals; joint events are
approximated by treating DQ_i + sum UQ_n as Poisson with the summed
expected-state rate and splitting the total multinomially.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from scipy.special import gammaln

from .errors import ConfigurationError
from .probability_kernel import conditional_multinomial, poisson_pmf

logger = logging.getLogger(__name__)

MAX_DOWNSTREAM_LINKS = 10
DIVISION_GUARD = 1e-12

DQ = "DQ"
UQ = "UQ"


@dataclass(frozen=True)
class NodeSpec:
    """
    One node of the network.

    Attributes:
        node_id: Identifier used in diagnostics
        upstream: Ordered ids of the links entering the node (M)
        downstream: Ordered ids of the links leaving the node (N)
        turning: turning[i][j] = probability that a vehicle leaving i joins j;
            1 - sum_j turning[i][j] leaves the network at i
    """

    node_id: str
    upstream: Tuple[str, ...]
    downstream: Tuple[str, ...]
    turning: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    def p(self, i: str, j: str) -> float:
        return float(self.turning.get(i, {}).get(j, 0.0))

    def turning_total(self, i: str) -> float:
        return math.fsum(self.p(i, j) for j in self.downstream)


@dataclass(frozen=True)
class LinkBoundary:
    """Boundary quantities of one link at the end of an interval."""

    capacity: int
    p_dq_empty: float
    p_uq_full: float
    q_dq: float
    q_uq: float


@dataclass(frozen=True)
class BoundarySnapshot:
    """Boundary quantities of every link, assembled after all link steps of an interval."""

    links: Mapping[str, LinkBoundary]

    def __getitem__(self, link_id: str) -> LinkBoundary:
        return self.links[link_id]


@dataclass(frozen=True)
class BlockingEvent:
    """Event {DQ_link = 0} or {UQ_link = capacity}."""

    kind: str
    link_id: str

    def target(self, snapshot: BoundarySnapshot) -> int:
        return 0 if self.kind == DQ else snapshot[self.link_id].capacity

    def rate(self, snapshot: BoundarySnapshot) -> float:
        boundary = snapshot[self.link_id]
        return boundary.q_dq if self.kind == DQ else boundary.q_uq

    def marginal(self, snapshot: BoundarySnapshot) -> float:
        boundary = snapshot[self.link_id]
        return boundary.p_dq_empty if self.kind == DQ else boundary.p_uq_full


JointProbability = Callable[[Sequence[BlockingEvent]], float]


def joint_blocking_probability(subset: Sequence[BlockingEvent], snapshot: BoundarySnapshot, delta: float) -> float:
    """
    Probability that all events of `subset` hold simultaneously.

    Singletons come straight from the link marginals. Larger subsets use
    poisson_pmf(delta * q_subset, sum of targets) times the multinomial split
    of the targets with cell probabilities proportional to the member rates.
    """
    if not subset:
        raise ValueError("subset must contain at least one event")
    if len(subset) == 1:
        return subset[0].marginal(snapshot)

    targets = [event.target(snapshot) for event in subset]
    rates = [event.rate(snapshot) for event in subset]
    total = sum(targets)
    if total == 0:
        return poisson_pmf(delta * math.fsum(rates), 0)
    if any(rate <= 0.0 and target > 0 for rate, target in zip(rates, targets)):
        return 0.0
    kept = [(target, rate) for target, rate in zip(targets, rates) if rate > 0.0]
    rate_sum = math.fsum(rate for _, rate in kept)
    split = conditional_multinomial(total, [t for t, _ in kept], [r for _, r in kept])
    return min(1.0, poisson_pmf(delta * rate_sum, total) * split)


def _node_events(i: Optional[str], node: NodeSpec) -> List[BlockingEvent]:
    events = [] if i is None else [BlockingEvent(DQ, i)]
    events.extend(BlockingEvent(UQ, n) for n in node.downstream)
    return events


def _inclusion_exclusion(
    events: Sequence[BlockingEvent],
    snapshot: BoundarySnapshot,
    delta: float,
    joint: Optional[JointProbability] = None,
) -> float:
    """
    P(none of `events` holds) = sum over subsets S of (-1)^|S| P(all of S).

    Subsets are visited in Gray-code order so each term updates the running
    log-product of the previous one by a single member.
    """
    m = len(events)
    targets = [event.target(snapshot) for event in events]
    rates = [event.rate(snapshot) for event in events]
    marginals = [event.marginal(snapshot) for event in events]
    log_terms = [
        (t * math.log(delta * r) - float(gammaln(t + 1))) if r > 0.0 else (0.0 if t == 0 else -math.inf)
        for t, r in zip(targets, rates)
    ]

    members = [False] * m
    size = 0
    rate_sum = 0.0
    log_sum = 0.0
    impossible = 0
    total = 1.0
    previous_gray = 0
    for step in range(1, 2**m):
        gray = step ^ (step >> 1)
        bit = (gray ^ previous_gray).bit_length() - 1
        previous_gray = gray
        members[bit] = not members[bit]
        sign = 1 if members[bit] else -1
        size += sign
        rate_sum += sign * rates[bit]
        if math.isinf(log_terms[bit]):
            impossible += sign
        else:
            log_sum += sign * log_terms[bit]

        if joint is not None:
            value = joint([e for e, on in zip(events, members) if on])
        elif size == 1:
            value = marginals[members.index(True)]
        elif impossible:
            value = 0.0
        else:
            # e^{-delta q} prod (delta r_m)^{t_m} / t_m! equals the Poisson term times the multinomial split.
            value = min(1.0, math.exp(log_sum - delta * rate_sum))
        total += value if size % 2 == 0 else -value
    return total


def _check_degree(node: NodeSpec) -> None:
    if len(node.downstream) > MAX_DOWNSTREAM_LINKS:
        raise ConfigurationError(
            f"node {node.node_id} has {len(node.downstream)} downstream links; at most "
            f"{MAX_DOWNSTREAM_LINKS} are supported, split the node into smaller nodes"
        )


def flow_transmission_probability(
    i: str,
    node: NodeSpec,
    snapshot: BoundarySnapshot,
    delta: float,
    *,
    joint: Optional[JointProbability] = None,
) -> float:
    """P(DQ_i>0, UQ_n<l_n for all n in N), clamped to [0, min of the marginals]."""
    _check_degree(node)
    value = _inclusion_exclusion(_node_events(i, node), snapshot, delta, joint)
    upper = 1.0 - snapshot[i].p_dq_empty
    for n in node.downstream:
        upper = min(upper, 1.0 - snapshot[n].p_uq_full)
    return min(max(value, 0.0), max(upper, 0.0))


def downstream_space_probability(
    node: NodeSpec,
    snapshot: BoundarySnapshot,
    delta: float,
    *,
    joint: Optional[JointProbability] = None,
) -> float:
    """P(UQ_n<l_n for all n in N), the inclusion-exclusion without the DQ event."""
    _check_degree(node)
    if not node.downstream:
        return 1.0
    value = _inclusion_exclusion(_node_events(None, node), snapshot, delta, joint)
    upper = min(1.0 - snapshot[n].p_uq_full for n in node.downstream)
    return min(max(value, 0.0), max(upper, 0.0))


def node_flow(i: str, j: str, node: NodeSpec, snapshot: BoundarySnapshot, service_rate: float, delta: float) -> float:
    """Expected flow rate from upstream link i to downstream link j."""
    p_ij = node.p(i, j)
    if p_ij == 0.0:
        return 0.0
    return p_ij * service_rate * flow_transmission_probability(i, node, snapshot, delta)


def _effective_rate(i: str, node: NodeSpec, snapshot: BoundarySnapshot, service_rate: float, ftp: float, delta: float) -> float:
    p_total = node.turning_total(i)
    if p_total == 0.0:
        return service_rate
    p_busy = 1.0 - snapshot[i].p_dq_empty
    if p_busy < DIVISION_GUARD:
        conditional = downstream_space_probability(node, snapshot, delta)
    else:
        conditional = ftp / p_busy
    conditional = min(1.0, max(0.0, conditional))
    return service_rate * ((1.0 - p_total) + p_total * conditional)


def effective_service_rate(i: str, node: NodeSpec, snapshot: BoundarySnapshot, service_rate: float, delta: float) -> float:
    """Service rate of link i reduced by the chance of downstream spillback."""
    ftp = flow_transmission_probability(i, node, snapshot, delta)
    return _effective_rate(i, node, snapshot, service_rate, ftp, delta)


def _arrival_rate(
    j: str,
    node: NodeSpec,
    snapshot: BoundarySnapshot,
    entry_rate: float,
    service_rates: Mapping[str, float],
    ftps: Mapping[str, float],
) -> float:
    p_space = 1.0 - snapshot[j].p_uq_full
    if p_space < DIVISION_GUARD:
        return entry_rate
    transfer = math.fsum(node.p(i, j) * service_rates[i] * ftps[i] for i in node.upstream)
    return entry_rate + transfer / p_space


def arrival_rate(
    j: str,
    node: NodeSpec,
    snapshot: BoundarySnapshot,
    entry_rate: float,
    service_rates: Mapping[str, float],
    delta: float,
) -> float:
    """Endogenous arrival rate of downstream link j."""
    ftps = {i: flow_transmission_probability(i, node, snapshot, delta) for i in node.upstream}
    return _arrival_rate(j, node, snapshot, entry_rate, service_rates, ftps)


@dataclass(frozen=True)
class NodeRates:
    """Everything the loader needs from one node for one interval."""

    transmission: Dict[str, float]
    transfers: Dict[Tuple[str, str], float]
    effective_service_rates: Dict[str, float]
    arrival_rates: Dict[str, float]
    outflows: Dict[str, float]
    inflows: Dict[str, float]


def evaluate_node(
    node: NodeSpec,
    snapshot: BoundarySnapshot,
    service_rates: Mapping[str, float],
    entry_rates: Mapping[str, float],
    delta: float,
) -> NodeRates:
    """Single pass over a node: transmission probabilities, flows, and updated rates."""
    _check_degree(node)
    ftps = {i: flow_transmission_probability(i, node, snapshot, delta) for i in node.upstream}
    transfers = {
        (i, j): node.p(i, j) * service_rates[i] * ftps[i] for i in node.upstream for j in node.downstream
    }
    mu_hat = {i: _effective_rate(i, node, snapshot, service_rates[i], ftps[i], delta) for i in node.upstream}
    lam = {
        j: _arrival_rate(j, node, snapshot, entry_rates.get(j, 0.0), service_rates, ftps) for j in node.downstream
    }
    outflows = {
        i: service_rates[i] * (1.0 - node.turning_total(i)) * (1.0 - snapshot[i].p_dq_empty)
        + math.fsum(transfers[(i, j)] for j in node.downstream)
        for i in node.upstream
    }
    inflows = {
        j: entry_rates.get(j, 0.0) * (1.0 - snapshot[j].p_uq_full)
        + math.fsum(transfers[(i, j)] for i in node.upstream)
        for j in node.downstream
    }
    return NodeRates(
        transmission=ftps,
        transfers=transfers,
        effective_service_rates=mu_hat,
        arrival_rates=lam,
        outflows=outflows,
        inflows=inflows,
    )


def expected_node_in_out_rates(
    node: NodeSpec,
    snapshot: BoundarySnapshot,
    service_rates: Mapping[str, float],
    entry_rates: Mapping[str, float],
    delta: float,
) -> Tuple[Dict[str, float], Dict[str, float]]:
    """Expected outflow of every upstream link and inflow of every downstream link."""
    rates = evaluate_node(node, snapshot, service_rates, entry_rates, delta)
    return rates.outflows, rates.inflows
