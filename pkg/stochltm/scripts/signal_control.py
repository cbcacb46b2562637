"""
Fixed-time signal optimization over green splits.

A plan holds one green split per endogenous phase, intersections in config
order. Every plan the search evaluates keeps each intersection's splits on
the simplex {x >= x_LB, sum x = b_d}: the only moves are transfers of green
time between two phases of the same intersection.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import stats

from .errors import ConfigurationError
from .event_simulator import monte_carlo, replicate
from .network_config import IntersectionSpec, NetworkConfig, SignalSettings
from .network_loader import run_deterministic_baseline, run_loading

logger = logging.getLogger(__name__)

__all__ = [
    "IntersectionSpec",
    "MODELS",
    "OptimizationResult",
    "PlanEvaluation",
    "SignalPlan",
    "TraceEntry",
    "evaluate_plan_by_simulation",
    "objective",
    "optimize",
    "sample_feasible_plan",
    "service_rates_from_plan",
]

MODELS = ("analytic", "marginal", "baseline", "mc")
FEASIBILITY_TOLERANCE = 1e-9
INITIAL_STEP = 0.1
MIN_STEP = 1e-3
MINUTE = 60.0


@dataclass(frozen=True)
class SignalPlan:
    """Green splits (ratios of the cycle), one per endogenous phase."""

    x: Tuple[float, ...]

    def split(self, signals: SignalSettings) -> List[Tuple[float, ...]]:
        """Green splits grouped per intersection."""
        sizes = [len(d.phases) for d in signals.intersections]
        if sum(sizes) != len(self.x):
            raise ValueError(f"plan has {len(self.x)} components, signal settings need {sum(sizes)}")
        out, start = [], 0
        for size in sizes:
            out.append(tuple(self.x[start : start + size]))
            start += size
        return out


def phase_labels(signals: SignalSettings) -> List[str]:
    return [f"{d.intersection_id}.{phase.phase_id}" for d in signals.intersections for phase in d.phases]


def check_plan(plan: SignalPlan, signals: SignalSettings) -> None:
    """Raise ValueError unless every intersection's splits sum to b_d and respect x_LB."""
    for d, splits in zip(signals.intersections, plan.split(signals)):
        total = math.fsum(splits)
        if abs(total - d.available_ratio) > FEASIBILITY_TOLERANCE:
            raise ValueError(
                f"green splits of intersection {d.intersection_id} sum to {total:.12g}, expected {d.available_ratio:g}"
            )
        lower = signals.lower_bound(d)
        if min(splits) < lower - FEASIBILITY_TOLERANCE:
            raise ValueError(
                f"green split {min(splits):.6g} of intersection {d.intersection_id} is below the minimum {lower:.6g}"
            )


def service_rates_from_plan(
    plan: SignalPlan, signals: SignalSettings, saturation_flow: Optional[float] = None
) -> Dict[str, float]:
    """mu_i = (sum of the splits of the phases serving i + e_i) * s for every signalized link."""
    check_plan(plan, signals)
    s = signals.saturation_flow if saturation_flow is None else float(saturation_flow)
    if s <= 0:
        raise ValueError(f"saturation flow must be positive, got {s}")
    rates: Dict[str, float] = {}
    for d, splits in zip(signals.intersections, plan.split(signals)):
        for link_id in d.signalized_links():
            green = math.fsum(x for phase, x in zip(d.phases, splits) if link_id in phase.links)
            green += float(d.fixed_green.get(link_id, 0.0))
            if green > 1.0 + FEASIBILITY_TOLERANCE:
                raise ValueError(
                    f"link {link_id} at intersection {d.intersection_id} gets green ratio {green:.6g} > 1"
                )
            rates[link_id] = green * s
    return rates


def sample_feasible_plan(signals: SignalSettings, rng: np.random.Generator) -> SignalPlan:
    """
    Uniform draw from the feasible set: per intersection, normalized
    exponential spacings scaled to b_d - |P_D| x_LB, shifted by x_LB.
    """
    x: List[float] = []
    for d in signals.intersections:
        n = len(d.phases)
        lower = signals.lower_bound(d)
        slack = d.available_ratio - n * lower
        if n == 0 or slack <= 0:
            raise ConfigurationError(
                f"intersection {d.intersection_id} has no room for {n} phases above the minimum green"
            )
        spacings = rng.exponential(size=n)
        shares = spacings / spacings.sum()
        splits = lower + slack * shares
        # Keep the sum exact up to rounding.
        splits[-1] = d.available_ratio - math.fsum(splits[:-1])
        x.extend(float(v) for v in splits)
    return SignalPlan(tuple(x))


def _objective_config(config: NetworkConfig, rates: Dict[str, float]) -> Tuple[NetworkConfig, int]:
    signals = config.signals
    assert signals is not None
    minutes = signals.objective_minutes
    return config.with_overrides(service_rates=rates, horizon=minutes * MINUTE, output_stride=MINUTE), minutes


def _require_signals(config: NetworkConfig) -> SignalSettings:
    if config.signals is None:
        raise ConfigurationError(f"scenario {config.name!r} has no signal settings")
    return config.signals


def objective(
    plan: SignalPlan,
    model: str,
    config: NetworkConfig,
    *,
    replications: int = 100,
    seed: int = 0,
    workers: int = 1,
) -> float:
    """
    Average over links and integer minutes 1..T of the expected downstream
    queue (vehicles on the link for the deterministic baseline).
    """
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}, got {model!r}")
    signals = _require_signals(config)
    rates = service_rates_from_plan(plan, signals)
    run_config, minutes = _objective_config(config, rates)
    n_links = len(run_config.links)
    if n_links == 0 or minutes == 0:
        return 0.0

    if model in ("analytic", "marginal"):
        coupling = "network" if model == "analytic" else "marginal"
        values = [r.e_dq for r in run_loading(run_config, coupling=coupling) if r.time_s > 0]
    elif model == "baseline":
        values = [r.vehicles for r in run_deterministic_baseline(run_config) if r.time_s > 0]
    else:
        result = monte_carlo(run_config, replications, seed, workers=workers)
        values = result.mean_dq[result.times > 0].ravel().tolist()
    return math.fsum(values) / (minutes * n_links)


@dataclass(frozen=True)
class TraceEntry:
    eval_index: int
    objective: float
    plan: SignalPlan


@dataclass
class OptimizationResult:
    best_plan: SignalPlan
    best_objective: float
    initial_objective: float
    trace: List[TraceEntry] = field(default_factory=list)

    @property
    def evaluations(self) -> int:
        return len(self.trace)


def _transfer(plan: SignalPlan, a: int, b: int, amount: float) -> SignalPlan:
    x = list(plan.x)
    x[a] -= amount
    x[b] += amount
    return SignalPlan(tuple(x))


def optimize(
    initial_plan: SignalPlan,
    model: str,
    config: NetworkConfig,
    budget: int,
    *,
    objective_fn: Optional[Callable[[SignalPlan], float]] = None,
    replications: int = 100,
    seed: int = 0,
    workers: int = 1,
) -> OptimizationResult:
    """
    Pattern search over paired green-split transfers within each intersection.

    The poll visits intersections in order and, within one, every ordered
    phase pair (a, b), moving min(step, x_a - x_LB) from a to b. The first
    improving move is accepted and the poll restarts from it; a full poll
    without improvement halves the step.
    """
    if budget < 1:
        raise ValueError(f"budget must be at least 1, got {budget}")
    signals = _require_signals(config)
    check_plan(initial_plan, signals)
    if objective_fn is None:

        def objective_fn(plan: SignalPlan) -> float:
            return objective(plan, model, config, replications=replications, seed=seed, workers=workers)

    trace: List[TraceEntry] = []

    def evaluate(plan: SignalPlan) -> float:
        check_plan(plan, signals)
        value = float(objective_fn(plan))
        trace.append(TraceEntry(eval_index=len(trace) + 1, objective=value, plan=plan))
        logger.debug("Evaluation %d: objective %.6g", len(trace), value)
        return value

    best_plan = initial_plan
    best = evaluate(initial_plan)
    initial = best
    offsets, start = [], 0
    for d in signals.intersections:
        offsets.append((d, start))
        start += len(d.phases)

    step = INITIAL_STEP
    while len(trace) < budget and step >= MIN_STEP:
        improved = False
        for d, offset in offsets:
            lower = signals.lower_bound(d)
            n = len(d.phases)
            for a in range(offset, offset + n):
                for b in range(offset, offset + n):
                    if a == b or len(trace) >= budget:
                        continue
                    amount = min(step, best_plan.x[a] - lower)
                    if amount <= FEASIBILITY_TOLERANCE:
                        continue
                    candidate = _transfer(best_plan, a, b, amount)
                    value = evaluate(candidate)
                    if value < best:
                        logger.info("Objective improved %.6g -> %.6g (step %.4g)", best, value, step)
                        best, best_plan, improved = value, candidate, True
                        break
                if improved:
                    break
            if improved:
                break
        if not improved:
            step /= 2.0

    logger.info(
        "Optimization (%s) finished after %d evaluations: %.6g -> %.6g", model, len(trace), initial, best
    )
    return OptimizationResult(best_plan=best_plan, best_objective=best, initial_objective=initial, trace=trace)


@dataclass(frozen=True)
class PlanEvaluation:
    """
    Simulated performance of a plan, one value per replication.

    `values` are average link queue lengths [veh]; `travel_times` are mean
    network travel times [s] of the trips completed within the window (NaN
    for a replication without completed trips). Means and 95% CI half-widths
    skip NaN entries.
    """

    values: Tuple[float, ...]
    mean: float
    half_width: float
    travel_times: Tuple[float, ...] = ()
    mean_travel_time: float = math.nan
    travel_time_half_width: float = math.nan


def _mean_and_half_width(values: List[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    arr = arr[~np.isnan(arr)]
    if arr.size == 0:
        return math.nan, math.nan
    if arr.size < 2:
        return float(arr.mean()), math.nan
    half = float(stats.norm.ppf(0.975) * arr.std(ddof=1) / math.sqrt(arr.size))
    return float(arr.mean()), half


def evaluate_plan_by_simulation(
    plan: SignalPlan,
    config: NetworkConfig,
    replications: int,
    seed: int,
    *,
    workers: int = 1,
) -> PlanEvaluation:
    """
    Per replication, the downstream queue averaged over links and integer
    minutes and the mean trip travel time; returns both samples with their
    means and 95% CI half-widths.
    """
    if replications < 2:
        raise ValueError(f"plan evaluation needs at least 2 replications, got {replications}")
    signals = _require_signals(config)
    run_config, _ = _objective_config(config, service_rates_from_plan(plan, signals))
    queues: List[float] = []
    trips: List[float] = []
    for sample in replicate(run_config, replications, seed, workers=workers):
        queues.append(float(sample.dq[sample.times > 0].mean()))
        trips.append(sample.mean_trip_time())
    queue_mean, queue_half = _mean_and_half_width(queues)
    trip_mean, trip_half = _mean_and_half_width(trips)
    return PlanEvaluation(
        values=tuple(queues),
        mean=queue_mean,
        half_width=queue_half,
        travel_times=tuple(trips),
        mean_travel_time=trip_mean,
        travel_time_half_width=trip_half,
    )
