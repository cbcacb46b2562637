import numpy as np
import pytest

from stochltm.scripts.errors import ConfigurationError
from stochltm.scripts.link_model import (
    FlowHistory,
    LagBuffer,
    LinkParams,
    LinkState,
    advance_link,
    compute_geometry,
    default_mixture_weight,
    expected_dq_rate,
    expected_uq_rate,
    instantaneous_flows,
    mixture_marginals,
    step_univariate_dq,
    step_univariate_uq,
)
from stochltm.scripts.probability_kernel import QueueDistribution

from .conftest import table_link


def _history(inflow, outflow, window=400):
    history = FlowHistory.for_window(window)
    for q_in, q_out in zip(inflow, outflow):
        history.append(q_in, q_out)
    return history


def _state(arrival_rate, service_rate=0.2, delta=0.1, mixture_weight=None):
    params = table_link(service_rate=service_rate)
    geometry = compute_geometry(params, delta)
    return LinkState.empty("1", params, geometry, arrival_rate=arrival_rate, mixture_weight=mixture_weight)


def test_geometry_of_fifty_metre_lane():
    geometry = compute_geometry(table_link(), 0.1)
    assert (geometry.space_capacity, geometry.k_fwd, geometry.k_bwd) == (10, 50, 100)
    assert geometry.window == 102


def test_geometry_ceiling_cases():
    one_step = LinkParams(0.05, 0.05, -0.05, 200.0, 0.67, 0.4)
    assert compute_geometry(one_step, 1.0).k_fwd == 1
    longer = LinkParams(0.055, 0.01, -0.005, 200.0, 0.67, 0.4)
    assert compute_geometry(longer, 0.1).k_fwd == 55


def test_geometry_rejects_link_without_space():
    with pytest.raises(ConfigurationError):
        compute_geometry(LinkParams(0.002, 0.01, -0.005, 200.0, 0.67, 0.4), 0.1)


def test_link_params_validation():
    with pytest.raises(ConfigurationError):
        LinkParams(0.05, 0.01, 0.005, 200.0, 0.67, 0.4)
    with pytest.raises(ConfigurationError):
        LinkParams(0.05, 0.01, -0.005, 200.0, 0.67, 0.4, mixture_weight=1.2)


def test_lag_buffer_reads_zero_before_start_and_guards_window():
    buffer = LagBuffer(3)
    for rate in (1.0, 2.0, 3.0, 4.0):
        buffer.append(rate)
    assert buffer.rate(-1) == 0.0
    assert buffer.rate(3) == 4.0
    assert buffer.cumulative(3) == pytest.approx(10.0)
    with pytest.raises(IndexError):
        buffer.rate(0)
    with pytest.raises(IndexError):
        buffer.rate(4)


def test_expected_uq_rate():
    assert expected_uq_rate(_history([0.1] * 3, [0.0] * 3), 3, 100) == pytest.approx(0.3)
    assert expected_uq_rate(FlowHistory.for_window(10), 0, 5) == 0.0
    history = _history([0.1] * 200, [0.1] * 100 + [0.0] * 100)
    assert expected_uq_rate(history, 200, 100) == pytest.approx(10.0)


def test_expected_dq_rate():
    history = _history([0.2] * 150, [0.0] * 150)
    assert expected_dq_rate(history, 40, 50) == 0.0
    assert expected_dq_rate(history, 100, 50) == pytest.approx(10.0)
    balanced = _history([0.3] * 20, [0.3] * 20)
    assert expected_dq_rate(balanced, 20, 5) == 0.0


def test_default_mixture_weight():
    assert default_mixture_weight(0.1, 0.3) == pytest.approx(0.75)
    assert default_mixture_weight(0.0, 0.4) == 0.9
    assert default_mixture_weight(1.0, 0.0) == 0.1
    assert default_mixture_weight(0.0, 0.0) == 0.5


def test_empty_link_without_arrivals_stays_empty():
    state = _state(0.0)
    for k in range(1, 50):
        advance_link(state, k, 0.1)
        instantaneous_flows(state, 0.0, state.effective_service_rate, mixture_marginals(state))
    for dist in (state.uq_from_uq_model, state.dq_from_uq_model, state.dq_from_dq_model, state.uq_from_dq_model):
        assert dist.probs[0] == pytest.approx(1.0)


def test_downstream_queue_empty_until_forward_lag_elapses():
    state = _state(0.2)
    for k in range(1, state.geometry.k_fwd):
        advance_link(state, k, 0.1)
        instantaneous_flows(state, 0.2, state.effective_service_rate, mixture_marginals(state))
        assert state.dq_from_uq_model.probs[0] == 1.0
        assert state.dq_from_dq_model.probs[0] == 1.0
    assert state.uq_from_uq_model.mean() > 0.0
    assert state.uq_from_dq_model.mean() > 0.0


def test_univariate_steps_return_pairs_of_valid_distributions():
    state = _state(0.15)
    uq, dq = step_univariate_uq(state, 1, 0.15, 0.2, 0.1)
    dq2, uq2 = step_univariate_dq(state, 1, 0.15, 0.2, 0.1)
    for dist in (uq, dq, dq2, uq2):
        assert isinstance(dist, QueueDistribution)
        assert dist.capacity == 10
    assert uq.mean() > 0.0 and dq.mean() == 0.0


def test_mixture_marginals_degenerate_weights():
    state = _state(0.1)
    state.uq_from_uq_model = QueueDistribution.point_mass(10, 0)
    state.uq_from_dq_model = QueueDistribution.point_mass(10, 10)
    uq, _ = mixture_marginals(state, 1.0)
    assert uq is state.uq_from_uq_model
    uq, _ = mixture_marginals(state, 0.0)
    assert uq is state.uq_from_dq_model
    uq, _ = mixture_marginals(state, 0.5)
    assert uq.probs[0] == pytest.approx(0.5)
    assert uq.probs[10] == pytest.approx(0.5)


def test_instantaneous_flows_example():
    params = LinkParams(0.005, 0.01, -0.005, 200.0, 0.67, 0.4)
    geometry = compute_geometry(params, 0.1)
    assert geometry.space_capacity == 1
    state = LinkState.empty("1", params, geometry, arrival_rate=0.2)
    uq = QueueDistribution(np.array([0.75, 0.25]), 1)
    dq = QueueDistribution.point_mass(1)
    q_in, q_out = instantaneous_flows(state, 0.2, 0.4, (uq, dq))
    assert q_in == pytest.approx(0.15)
    assert q_out == 0.0
    assert state.history.inflow.rate(1) == pytest.approx(0.15)

    full = QueueDistribution.point_mass(1, 1)
    q_in, _ = instantaneous_flows(state, 0.2, 0.4, (full, dq))
    assert q_in == 0.0


def test_isolated_link_flows_respect_rates_and_conservation():
    delta = 0.1
    state = _state(0.3, service_rate=0.2, delta=delta)
    inflow = outflow = 0.0
    slack = state.geometry.space_capacity + 0.2 * delta * state.geometry.k_bwd
    for k in range(1, 3000):
        advance_link(state, k, delta)
        q_in, q_out = instantaneous_flows(state, 0.3, 0.2, mixture_marginals(state))
        assert q_in <= 0.3 + 1e-12
        assert q_out <= 0.2 + 1e-12
        inflow += q_in * delta
        outflow += q_out * delta
        assert -1e-6 <= inflow - outflow <= slack + 1e-6
    uq, dq = mixture_marginals(state)
    assert uq.mean() > dq.mean() > 0.0


def test_secondary_chains_follow_each_models_own_boundary_flow():
    params = table_link(service_rate=0.2)
    geometry = compute_geometry(params, 1.0)
    assert (geometry.k_fwd, geometry.k_bwd) == (5, 10)
    state = LinkState.empty("1", params, geometry, arrival_rate=0.0)
    for r in range(1, 12):
        realized = 0.3 if r == 1 else 0.0
        state.history.append(realized, realized)
        state.uq_model_inflow.append(0.0)
        state.dq_model_outflow.append(0.0)
    start = QueueDistribution.point_mass(10, 3)
    state.uq_from_uq_model = start
    state.uq_from_dq_model = start

    # Realized inflow of interval 1 reaches the downstream end at k=7.
    _, dq_from_uq = step_univariate_uq(state, 7, 0.0, 0.2, 1.0)
    dq_from_dq, _ = step_univariate_dq(state, 7, 0.0, 0.2, 1.0)
    assert dq_from_uq.prob_empty() == pytest.approx(1.0, abs=1e-12)
    assert dq_from_dq.mean() > 0.0

    # Realized outflow of interval 1 frees upstream space at k=12.
    uq_from_uq, _ = step_univariate_uq(state, 12, 0.0, 0.2, 1.0)
    _, uq_from_dq = step_univariate_dq(state, 12, 0.0, 0.2, 1.0)
    assert uq_from_uq.mean() < 3.0
    np.testing.assert_allclose(uq_from_dq.probs, start.probs, atol=1e-12)
