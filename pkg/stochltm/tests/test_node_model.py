import itertools
import math

import numpy as np
import pytest

from stochltm.scripts.errors import ConfigurationError
from stochltm.scripts.node_model import (
    DQ,
    UQ,
    BlockingEvent,
    BoundarySnapshot,
    LinkBoundary,
    NodeSpec,
    _arrival_rate,
    _effective_rate,
    arrival_rate,
    downstream_space_probability,
    effective_service_rate,
    evaluate_node,
    expected_node_in_out_rates,
    flow_transmission_probability,
    joint_blocking_probability,
    node_flow,
)
from stochltm.scripts.probability_kernel import poisson_pmf


def _boundary(capacity=10, p_dq_empty=1.0, p_uq_full=0.0, q_dq=0.0, q_uq=0.0):
    return LinkBoundary(capacity=capacity, p_dq_empty=p_dq_empty, p_uq_full=p_uq_full, q_dq=q_dq, q_uq=q_uq)


def _exact_product(snapshot):
    def joint(events):
        return math.prod(event.marginal(snapshot) for event in events)

    return joint


DIVERGE = NodeSpec("d", ("i",), ("a", "b"), {"i": {"a": 0.4, "b": 0.6}})


def test_singleton_uses_marginal():
    snapshot = BoundarySnapshot({"i": _boundary(p_dq_empty=0.3, q_dq=2.0)})
    assert joint_blocking_probability([BlockingEvent(DQ, "i")], snapshot, 1.0) == 0.3


def test_joint_poisson_multinomial_example():
    snapshot = BoundarySnapshot({"i": _boundary(q_dq=1.0), "j": _boundary(capacity=2, q_uq=1.0)})
    value = joint_blocking_probability([BlockingEvent(DQ, "i"), BlockingEvent(UQ, "j")], snapshot, 1.0)
    assert value == pytest.approx(poisson_pmf(2.0, 2) * 0.25, rel=1e-12)
    assert value == pytest.approx(0.06767, abs=1e-5)


def test_joint_with_zero_targets_collapses_to_exponential():
    snapshot = BoundarySnapshot({"i": _boundary(q_dq=0.7), "k": _boundary(q_dq=0.5)})
    value = joint_blocking_probability([BlockingEvent(DQ, "i"), BlockingEvent(DQ, "k")], snapshot, 0.5)
    assert value == pytest.approx(math.exp(-0.5 * 1.2), rel=1e-12)


def test_transmission_trivial_cases():
    always_empty = BoundarySnapshot({"i": _boundary(p_dq_empty=1.0), "a": _boundary(), "b": _boundary()})
    assert flow_transmission_probability("i", DIVERGE, always_empty, 0.1) == 0.0

    sink = NodeSpec("s", ("i",), (), {})
    snapshot = BoundarySnapshot({"i": _boundary(p_dq_empty=0.35, q_dq=3.0)})
    assert flow_transmission_probability("i", sink, snapshot, 0.1) == pytest.approx(0.65)


def test_transmission_matches_enumeration_with_exact_joints():
    rng = np.random.default_rng(11)
    for _ in range(500):
        downstream = tuple(f"n{k}" for k in range(int(rng.integers(1, 4))))
        shares = rng.dirichlet(np.ones(len(downstream)))
        node = NodeSpec("d", ("i",), downstream, {"i": {n: float(p) for n, p in zip(downstream, shares)}})
        links = ("i",) + downstream
        caps = {link: int(rng.integers(1, 5)) for link in links}
        dists = {link: rng.dirichlet(np.ones(cap + 1)) for link, cap in caps.items()}
        snapshot = BoundarySnapshot(
            {
                link: _boundary(
                    capacity=caps[link],
                    p_dq_empty=float(dists[link][0]),
                    p_uq_full=float(dists[link][-1]),
                    q_dq=float(rng.uniform(0.0, 2.0)),
                    q_uq=float(rng.uniform(0.0, 2.0)),
                )
                for link in links
            }
        )
        brute = 0.0
        for state in itertools.product(*(range(caps[link] + 1) for link in links)):
            if state[0] > 0 and all(x < caps[n] for x, n in zip(state[1:], downstream)):
                brute += math.prod(float(dists[link][x]) for link, x in zip(links, state))
        got = flow_transmission_probability("i", node, snapshot, 0.1, joint=_exact_product(snapshot))
        assert got == pytest.approx(brute, abs=1e-12)


def test_gray_code_sum_equals_direct_subset_sum():
    snapshot = BoundarySnapshot(
        {
            "i": _boundary(capacity=3, p_dq_empty=0.2, q_dq=1.5),
            "a": _boundary(capacity=2, p_uq_full=0.3, q_uq=4.0),
            "b": _boundary(capacity=4, p_uq_full=0.1, q_uq=6.0),
        }
    )
    delta = 0.5
    events = [BlockingEvent(DQ, "i"), BlockingEvent(UQ, "a"), BlockingEvent(UQ, "b")]
    direct = 1.0
    for size in range(1, len(events) + 1):
        for subset in itertools.combinations(events, size):
            direct += (-1) ** size * joint_blocking_probability(list(subset), snapshot, delta)
    upper = min(0.8, 0.7, 0.9)
    expected = min(max(direct, 0.0), upper)
    assert flow_transmission_probability("i", DIVERGE, snapshot, delta) == pytest.approx(expected, abs=1e-12)


def test_transmission_is_clamped_and_monotone():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p_full_a, p_full_b = rng.uniform(size=2)
        snapshot = BoundarySnapshot(
            {
                "i": _boundary(capacity=3, p_dq_empty=float(rng.uniform()), q_dq=float(rng.uniform(0, 3))),
                "a": _boundary(capacity=2, p_uq_full=float(p_full_a), q_uq=float(rng.uniform(0, 3))),
                "b": _boundary(capacity=2, p_uq_full=float(p_full_b), q_uq=float(rng.uniform(0, 3))),
            }
        )
        value = flow_transmission_probability("i", DIVERGE, snapshot, 0.1)
        upper = min(1 - snapshot["i"].p_dq_empty, 1 - p_full_a, 1 - p_full_b)
        assert 0.0 <= value <= upper + 1e-15

    def exact_ftp(p_full_a):
        snapshot = BoundarySnapshot(
            {"i": _boundary(p_dq_empty=0.2), "a": _boundary(p_uq_full=p_full_a), "b": _boundary(p_uq_full=0.1)}
        )
        return flow_transmission_probability("i", DIVERGE, snapshot, 0.1, joint=_exact_product(snapshot))

    values = [exact_ftp(p) for p in (0.0, 0.2, 0.5, 0.9)]
    assert values == sorted(values, reverse=True)


def test_degree_limit():
    wide = NodeSpec("w", ("i",), tuple(f"n{k}" for k in range(11)), {})
    snapshot = BoundarySnapshot({"i": _boundary(), **{f"n{k}": _boundary() for k in range(11)}})
    with pytest.raises(ConfigurationError, match="split the node"):
        flow_transmission_probability("i", wide, snapshot, 0.1)


def test_node_flow_examples():
    node = NodeSpec("d", ("i",), ("a", "b"), {"i": {"a": 0.5}})
    snapshot = BoundarySnapshot({"i": _boundary(p_dq_empty=0.0), "a": _boundary(), "b": _boundary()})
    assert node_flow("i", "b", node, snapshot, 0.4, 0.1) == 0.0
    assert node_flow("i", "a", node, snapshot, 0.4, 0.1) == pytest.approx(0.2)
    empty = BoundarySnapshot({"i": _boundary(), "a": _boundary(), "b": _boundary()})
    assert node_flow("i", "a", node, empty, 0.4, 0.1) == 0.0


def test_effective_service_rate_examples():
    exit_only = NodeSpec("x", ("i",), ("a",), {})
    snapshot = BoundarySnapshot({"i": _boundary(p_dq_empty=0.4, q_dq=1.0), "a": _boundary(p_uq_full=0.5, q_uq=1.0)})
    assert effective_service_rate("i", exit_only, snapshot, 0.4, 0.1) == 0.4

    node = NodeSpec("n", ("i",), ("a",), {"i": {"a": 1.0}})
    free = BoundarySnapshot({"i": _boundary(p_dq_empty=0.4, q_dq=1.0), "a": _boundary()})
    assert effective_service_rate("i", node, free, 0.4, 0.1) == pytest.approx(0.4)

    half = BoundarySnapshot({"i": _boundary(p_dq_empty=0.5), "a": _boundary()})
    assert _effective_rate("i", node, half, 0.4, 0.25, 0.1) == pytest.approx(0.2)


def test_effective_service_rate_bounds():
    node = NodeSpec("n", ("i",), ("a", "b"), {"i": {"a": 0.3, "b": 0.5}})
    rng = np.random.default_rng(5)
    for _ in range(50):
        snapshot = BoundarySnapshot(
            {
                "i": _boundary(p_dq_empty=float(rng.uniform()), q_dq=float(rng.uniform(0, 2))),
                "a": _boundary(p_uq_full=float(rng.uniform()), q_uq=float(rng.uniform(0, 2))),
                "b": _boundary(p_uq_full=float(rng.uniform()), q_uq=float(rng.uniform(0, 2))),
            }
        )
        mu_hat = effective_service_rate("i", node, snapshot, 0.4, 0.1)
        assert 0.4 * 0.2 - 1e-12 <= mu_hat <= 0.4 + 1e-12


def test_effective_rate_falls_back_to_downstream_space_when_idle():
    node = NodeSpec("n", ("i",), ("a",), {"i": {"a": 1.0}})
    snapshot = BoundarySnapshot({"i": _boundary(p_dq_empty=1.0), "a": _boundary(p_uq_full=0.25, q_uq=1.0)})
    assert downstream_space_probability(node, snapshot, 0.1) == pytest.approx(0.75)
    assert effective_service_rate("i", node, snapshot, 0.4, 0.1) == pytest.approx(0.3)


def test_arrival_rate_examples():
    source = NodeSpec("src", (), ("j",), {})
    snapshot = BoundarySnapshot({"j": _boundary(p_uq_full=0.4)})
    assert arrival_rate("j", source, snapshot, 0.05, {}, 0.1) == 0.05

    node = NodeSpec("n", ("i",), ("j",), {"i": {"j": 1.0}})
    idle = BoundarySnapshot({"i": _boundary(p_dq_empty=1.0), "j": _boundary(p_uq_full=0.4)})
    assert arrival_rate("j", node, idle, 0.05, {"i": 0.4}, 0.1) == 0.05
    assert _arrival_rate("j", node, idle, 0.05, {"i": 0.4}, {"i": 0.3}) == pytest.approx(0.25)


def test_node_rates_conserve_transfers():
    node = NodeSpec("m", ("i", "k"), ("a", "b"), {"i": {"a": 0.5, "b": 0.3}, "k": {"a": 1.0}})
    snapshot = BoundarySnapshot(
        {
            "i": _boundary(p_dq_empty=0.3, q_dq=1.0),
            "k": _boundary(p_dq_empty=0.6, q_dq=0.4),
            "a": _boundary(p_uq_full=0.2, q_uq=2.0),
            "b": _boundary(p_uq_full=0.1, q_uq=1.0),
        }
    )
    mu = {"i": 0.4, "k": 0.3}
    gamma = {"a": 0.05, "b": 0.0}
    rates = evaluate_node(node, snapshot, mu, gamma, 0.1)
    out_transfer = math.fsum(
        rates.outflows[i] - mu[i] * (1 - node.turning_total(i)) * (1 - snapshot[i].p_dq_empty) for i in node.upstream
    )
    in_transfer = math.fsum(rates.inflows[j] - gamma[j] * (1 - snapshot[j].p_uq_full) for j in node.downstream)
    assert out_transfer == pytest.approx(in_transfer, abs=1e-12)
    for (i, j), flow in rates.transfers.items():
        assert flow == pytest.approx(node_flow(i, j, node, snapshot, mu[i], 0.1))
        assert flow <= node.p(i, j) * mu[i] + 1e-15
    for j in node.downstream:
        assert rates.arrival_rates[j] >= gamma[j]


def test_empty_network_rates_are_zero():
    node = NodeSpec("m", ("i",), ("a",), {"i": {"a": 1.0}})
    snapshot = BoundarySnapshot({"i": _boundary(), "a": _boundary()})
    outflows, inflows = expected_node_in_out_rates(node, snapshot, {"i": 0.4}, {}, 0.1)
    assert outflows == {"i": 0.0}
    assert inflows == {"a": 0.0}
