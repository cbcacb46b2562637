"""
Discrete-event Monte-Carlo simulator of the stochastic link transmission model.

Vehicles are sampled individually with exact forward (L/v) and backward (L/|w|)
lags. Each link keeps:
- UQ, the number of occupied spaces at its upstream end
- the vehicles still travelling the link (forward lag not yet elapsed)
- the FIFO queue of vehicles waiting at its downstream end (DQ)

The head vehicle of a DQ draws its destination when service starts and keeps
it while blocked by a full destination; the remaining service time is
re-drawn once a backward-lag expiry frees space there.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Deque, Dict, Iterator, List, Optional, Tuple

import numpy as np
from scipy import stats

from .errors import SimulationError
from .link_model import compute_geometry
from .network_config import NetworkConfig, require_runnable

logger = logging.getLogger(__name__)

# Tie-break priority of simultaneous events.
BACKWARD_LAG = 0
FORWARD_LAG = 1
SERVICE = 2
ARRIVAL = 3

EXIT = ""
CONFIDENCE = 0.95


@dataclass(order=True)
class SimEvent:
    time: float
    priority: int
    seq: int
    link_id: str = field(compare=False)
    payload: int = field(default=0, compare=False)


@dataclass
class SimLinkState:
    link_id: str
    capacity: int
    forward_lag: float
    backward_lag: float
    service_rate: float
    uq: int = 0
    in_transit: Deque[int] = field(default_factory=deque)
    dq: Deque[int] = field(default_factory=deque)
    serving: bool = False
    service_token: int = 0
    destination: Optional[str] = None
    blocked_on: Optional[str] = None
    entered: int = 0
    departed: int = 0

    def occupancy(self) -> int:
        return len(self.in_transit) + len(self.dq)


@dataclass
class ReplicationTrace:
    """Vehicle accounting of one replication."""

    entered: int = 0
    exited: int = 0
    blocked: int = 0
    arrivals: Dict[str, List[int]] = field(default_factory=dict)
    departures: Dict[str, List[int]] = field(default_factory=dict)
    occupancy_at_end: int = 0


@dataclass(frozen=True)
class SampledTrajectory:
    """
    One replication sampled on the output grid.

    Arrays are indexed [time, link] with links in `link_ids` order. `entered`
    and `departed` hold cumulative vehicle counts per link. `trip_times` holds
    the network travel time [s] of every vehicle that left the network before
    the horizon.
    """

    times: np.ndarray
    link_ids: Tuple[str, ...]
    uq: np.ndarray
    dq: np.ndarray
    entered: np.ndarray
    departed: np.ndarray
    trace: Optional[ReplicationTrace] = None
    trip_times: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def series(self, link_id: str) -> Tuple[np.ndarray, np.ndarray]:
        index = self.link_ids.index(link_id)
        return self.uq[:, index], self.dq[:, index]

    def mean_trip_time(self) -> float:
        """Mean travel time of completed trips; NaN when no vehicle left the network."""
        if self.trip_times.size == 0:
            return math.nan
        return float(self.trip_times.mean())


def derive_seed(base_seed: int, replication: int) -> int:
    """Seed of replication r, derived deterministically from the base seed."""
    if base_seed < 0 or replication < 0:
        raise ValueError("seeds and replication indices must be nonnegative")
    return int(np.random.SeedSequence([int(base_seed), int(replication)]).generate_state(1, dtype=np.uint64)[0])


def output_times(config: NetworkConfig) -> np.ndarray:
    stride = config.stride_steps()
    return np.array([round(k * config.delta, 9) for k in range(0, config.steps() + 1, stride)])


class _Replication:
    def __init__(self, config: NetworkConfig, seed: int, trace: bool) -> None:
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.horizon = config.steps() * config.delta
        self.links: Dict[str, SimLinkState] = {}
        for link_id, p in config.links.items():
            self.links[link_id] = SimLinkState(
                link_id=link_id,
                capacity=compute_geometry(p, config.delta).space_capacity,
                forward_lag=p.length / p.free_flow_speed,
                backward_lag=p.length / abs(p.backward_wave_speed),
                service_rate=p.service_rate,
            )
        self.routes: Dict[str, Tuple[List[str], np.ndarray]] = {}
        for link_id in config.links:
            node = config.exit_node(link_id)
            targets: List[str] = []
            probs: List[float] = []
            if node is not None:
                for j in node.downstream:
                    p_ij = node.p(link_id, j)
                    if p_ij > 0:
                        targets.append(j)
                        probs.append(p_ij)
            exit_prob = max(0.0, 1.0 - math.fsum(probs))
            if exit_prob > 0 or not targets:
                targets.append(EXIT)
                probs.append(exit_prob or 1.0)
            weights = np.asarray(probs, dtype=float)
            self.routes[link_id] = (targets, weights / weights.sum())
        self.waiters: Dict[str, List[str]] = {link_id: [] for link_id in config.links}
        self.events: List[SimEvent] = []
        self.seq = 0
        self.next_vehicle = 0
        self.trace = ReplicationTrace(
            arrivals={link_id: [] for link_id in config.links},
            departures={link_id: [] for link_id in config.links},
        ) if trace else None
        self.entered = 0
        self.exited = 0
        self.blocked = 0
        self.network_entry: Dict[int, float] = {}
        self.trip_times: List[float] = []

    def _push(self, time: float, priority: int, link_id: str, payload: int = 0) -> None:
        self.seq += 1
        heapq.heappush(self.events, SimEvent(time, priority, self.seq, link_id, payload))

    def _schedule_arrival(self, link_id: str, now: float) -> None:
        rate = self.config.max_entry_rate(link_id)
        if rate <= 0:
            return
        t = now + self.rng.exponential(1.0 / rate)
        if t <= self.horizon:
            self._push(t, ARRIVAL, link_id)

    def _enter(self, link_id: str, vehicle: int, now: float) -> None:
        link = self.links[link_id]
        if link.uq >= link.capacity:
            raise SimulationError(f"vehicle entered full link {link_id} at t={now:.6f}")
        link.uq += 1
        link.entered += 1
        link.in_transit.append(vehicle)
        if self.trace is not None:
            self.trace.arrivals[link_id].append(vehicle)
        self._push(now + link.forward_lag, FORWARD_LAG, link_id, vehicle)

    def _start_service(self, link_id: str, now: float) -> None:
        link = self.links[link_id]
        if link.serving or link.blocked_on is not None or not link.dq or link.service_rate <= 0:
            return
        targets, weights = self.routes[link_id]
        if link.destination is None:
            link.destination = targets[int(self.rng.choice(len(targets), p=weights))]
        link.serving = True
        link.service_token += 1
        self._push(now + self.rng.exponential(1.0 / link.service_rate), SERVICE, link_id, link.service_token)

    def _on_arrival(self, event: SimEvent) -> None:
        link_id = event.link_id
        rate = self.config.entry_rate(link_id, event.time)
        if self.rng.random() * self.config.max_entry_rate(link_id) < rate:
            link = self.links[link_id]
            if link.uq < link.capacity:
                self.entered += 1
                self.network_entry[self.next_vehicle] = event.time
                self._enter(link_id, self.next_vehicle, event.time)
                self.next_vehicle += 1
            else:
                self.blocked += 1
        self._schedule_arrival(link_id, event.time)

    def _on_forward_lag(self, event: SimEvent) -> None:
        link = self.links[event.link_id]
        if not link.in_transit or link.in_transit[0] != event.payload:
            raise SimulationError(f"forward lag of vehicle {event.payload} out of order on link {link.link_id}")
        link.dq.append(link.in_transit.popleft())
        self._start_service(link.link_id, event.time)

    def _on_backward_lag(self, event: SimEvent) -> None:
        link = self.links[event.link_id]
        if link.uq <= link.occupancy():
            raise SimulationError(f"space released on link {link.link_id} with no pending space")
        link.uq -= 1
        waiting = self.waiters[link.link_id]
        self.waiters[link.link_id] = []
        for upstream_id in waiting:
            upstream = self.links[upstream_id]
            upstream.blocked_on = None
            self._start_service(upstream_id, event.time)

    def _on_service(self, event: SimEvent) -> None:
        link = self.links[event.link_id]
        if not link.serving or event.payload != link.service_token or not link.dq:
            raise SimulationError(f"stale service completion on link {link.link_id} at t={event.time:.6f}")
        link.serving = False
        destination = link.destination
        if destination != EXIT and self.links[destination].uq >= self.links[destination].capacity:
            link.blocked_on = destination
            self.waiters[destination].append(link.link_id)
            return

        vehicle = link.dq.popleft()
        link.destination = None
        link.departed += 1
        if self.trace is not None:
            self.trace.departures[link.link_id].append(vehicle)
        self._push(event.time + link.backward_lag, BACKWARD_LAG, link.link_id)
        if destination == EXIT:
            self.exited += 1
            self.trip_times.append(event.time - self.network_entry.pop(vehicle))
        else:
            self._enter(destination, vehicle, event.time)
        self._start_service(link.link_id, event.time)

    def run(self) -> SampledTrajectory:
        handlers = {
            BACKWARD_LAG: self._on_backward_lag,
            FORWARD_LAG: self._on_forward_lag,
            SERVICE: self._on_service,
            ARRIVAL: self._on_arrival,
        }
        for link_id in self.config.links:
            self._schedule_arrival(link_id, 0.0)

        link_ids = tuple(self.config.links)
        times = output_times(self.config)
        shape = (len(times), len(link_ids))
        uq = np.zeros(shape, dtype=np.int64)
        dq = np.zeros(shape, dtype=np.int64)
        entered = np.zeros(shape, dtype=np.int64)
        departed = np.zeros(shape, dtype=np.int64)

        last_time = 0.0
        for row, sample_time in enumerate(times):
            while self.events and self.events[0].time <= sample_time + 1e-12:
                event = heapq.heappop(self.events)
                if event.time < last_time:
                    raise SimulationError(f"event at t={event.time:.6f} popped after t={last_time:.6f}")
                last_time = event.time
                handlers[event.priority](event)
            for col, link_id in enumerate(link_ids):
                link = self.links[link_id]
                if not 0 <= len(link.dq) <= link.uq <= link.capacity:
                    raise SimulationError(f"link {link_id} left its state space (UQ={link.uq}, DQ={len(link.dq)})")
                uq[row, col] = link.uq
                dq[row, col] = len(link.dq)
                entered[row, col] = link.entered
                departed[row, col] = link.departed

        if self.trace is not None:
            self.trace.entered = self.entered
            self.trace.exited = self.exited
            self.trace.blocked = self.blocked
            self.trace.occupancy_at_end = sum(link.occupancy() for link in self.links.values())
        return SampledTrajectory(
            times=times,
            link_ids=link_ids,
            uq=uq,
            dq=dq,
            entered=entered,
            departed=departed,
            trace=self.trace,
            trip_times=np.asarray(self.trip_times, dtype=float),
        )


def simulate_replication(config: NetworkConfig, seed: int, *, trace: bool = False) -> SampledTrajectory:
    """
    One replication of the exact-lag dynamics, sampled on the output grid.

    Events at or before a sample time are applied before the state is sampled.
    Blocked external arrivals are lost.
    """
    require_runnable(config)
    return _Replication(config, seed, trace).run()


def _run_one(args: Tuple[NetworkConfig, int]) -> SampledTrajectory:
    config, seed = args
    return _Replication(config, seed, False).run()


def replicate(
    config: NetworkConfig,
    replications: int,
    base_seed: int,
    *,
    workers: int = 1,
) -> Iterator[SampledTrajectory]:
    """Yield replications 0..R-1 in order, optionally computed in a process pool."""
    require_runnable(config)
    jobs = [(config, derive_seed(base_seed, r)) for r in range(replications)]
    if workers <= 1:
        for job in jobs:
            yield _run_one(job)
        return
    with ProcessPoolExecutor(max_workers=workers) as executor:
        yield from executor.map(_run_one, jobs, chunksize=max(1, replications // (4 * workers)))


@dataclass(frozen=True)
class MonteCarloResult:
    """
    Sample means and normal-approximation 95% confidence half-widths.

    Arrays are indexed [time, link]. `q_in` and `q_out` are mean entry and
    departure rates over the stride ending at each output time.
    """

    times: np.ndarray
    link_ids: Tuple[str, ...]
    replications: int
    mean_uq: np.ndarray
    mean_dq: np.ndarray
    half_width_uq: np.ndarray
    half_width_dq: np.ndarray
    p_uq_full: np.ndarray
    p_dq_empty: np.ndarray
    q_in: np.ndarray
    q_out: np.ndarray


def _half_width(total: np.ndarray, squares: np.ndarray, n: int) -> np.ndarray:
    mean = total / n
    variance = np.maximum(0.0, (squares - n * mean**2) / (n - 1))
    z = float(stats.norm.ppf(0.5 + CONFIDENCE / 2.0))
    return z * np.sqrt(variance / n)


def monte_carlo(
    config: NetworkConfig,
    replications: int,
    base_seed: int,
    *,
    workers: int = 1,
) -> MonteCarloResult:
    """Mean UQ/DQ trajectories over R replications with 95% CI half-widths."""
    if replications < 2:
        raise ValueError(f"monte_carlo needs at least 2 replications, got {replications}")
    logger.info(
        "Simulating %s: %d replications, base seed %d, %d worker(s)",
        config.name or "scenario",
        replications,
        base_seed,
        workers,
    )
    capacities = None
    sums: Dict[str, np.ndarray] = {}
    for sample in replicate(config, replications, base_seed, workers=workers):
        if capacities is None:
            capacities = np.array([simulated_capacity(config, link_id) for link_id in sample.link_ids])
            times, link_ids = sample.times, sample.link_ids
        parts = {
            "uq": sample.uq.astype(float),
            "dq": sample.dq.astype(float),
            "uq2": sample.uq.astype(float) ** 2,
            "dq2": sample.dq.astype(float) ** 2,
            "full": (sample.uq == capacities).astype(float),
            "empty": (sample.dq == 0).astype(float),
            "entered": sample.entered.astype(float),
            "departed": sample.departed.astype(float),
        }
        for key, value in parts.items():
            sums[key] = sums[key] + value if key in sums else value

    n = replications
    stride = config.stride_steps() * config.delta
    logger.info("Simulation of %s finished", config.name or "scenario")
    return MonteCarloResult(
        times=times,
        link_ids=link_ids,
        replications=n,
        mean_uq=sums["uq"] / n,
        mean_dq=sums["dq"] / n,
        half_width_uq=_half_width(sums["uq"], sums["uq2"], n),
        half_width_dq=_half_width(sums["dq"], sums["dq2"], n),
        p_uq_full=sums["full"] / n,
        p_dq_empty=sums["empty"] / n,
        q_in=_stride_rates(sums["entered"] / n, stride),
        q_out=_stride_rates(sums["departed"] / n, stride),
    )


def _stride_rates(cumulative: np.ndarray, stride: float) -> np.ndarray:
    rates = np.zeros_like(cumulative)
    rates[1:] = np.diff(cumulative, axis=0) / stride
    return rates


def simulated_capacity(config: NetworkConfig, link_id: str) -> int:
    return compute_geometry(config.links[link_id], config.delta).space_capacity
