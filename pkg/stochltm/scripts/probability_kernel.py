"""
Numerical primitives shared by the link and node models.

Provides:
- QueueDistribution, a probability vector over occupancy states 0..capacity
- Poisson pmf and conditional multinomial terms evaluated in log space
- Exact transient propagation of a finite birth-death chain (uniformization)

All functions are pure; they never mutate their inputs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-9
HEALTH_TOLERANCE = 1e-6
TRUNCATION_TOLERANCE = 1e-10
# Uniformized Poisson mean above which an interval is split into sub-intervals.
MAX_UNIFORMIZED_MEAN = 50.0
LOG_SPACE_THRESHOLD = 20


@dataclass(frozen=True)
class QueueDistribution:
    """
    Probability of each occupancy state 0..capacity of a boundary queue.

    Attributes:
        probs: Probability vector of length capacity + 1
        capacity: Space capacity of the link (vehicles)
    """

    probs: np.ndarray
    capacity: int

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if probs.shape != (self.capacity + 1,):
            raise ValueError(f"expected {self.capacity + 1} probabilities, got shape {probs.shape}")
        if np.any(~np.isfinite(probs)) or np.any(probs < 0.0) or np.any(probs > 1.0 + NORMALIZATION_TOLERANCE):
            raise ValueError("probabilities must be finite and lie in [0, 1]")
        if abs(float(probs.sum()) - 1.0) > NORMALIZATION_TOLERANCE:
            raise ValueError(f"probabilities sum to {probs.sum():.12f}, expected 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def point_mass(cls, capacity: int, state: int = 0) -> "QueueDistribution":
        probs = np.zeros(capacity + 1)
        probs[state] = 1.0
        return cls(probs, capacity)

    @classmethod
    def from_weights(cls, weights: Sequence[float], capacity: int) -> "QueueDistribution":
        """Build a distribution from nonnegative weights, renormalizing them."""
        arr = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        total = float(arr.sum())
        if total <= 0.0:
            raise ValueError("weights must have positive mass")
        return cls(np.clip(arr / total, 0.0, 1.0), capacity)

    def mean(self) -> float:
        return float(np.dot(np.arange(self.capacity + 1), self.probs))

    def prob_empty(self) -> float:
        return float(self.probs[0])

    def prob_full(self) -> float:
        return float(self.probs[-1])


def poisson_pmf(mean: float, n: int) -> float:
    """Return e^{-mean} mean^n / n!, switching to log space for n > 20."""
    if not math.isfinite(mean) or mean < 0:
        raise ValueError(f"Poisson mean must be a finite nonnegative number, got {mean}")
    if n < 0:
        raise ValueError(f"Poisson count must be nonnegative, got {n}")
    if mean == 0.0:
        return 1.0 if n == 0 else 0.0
    if n <= LOG_SPACE_THRESHOLD:
        return math.exp(-mean) * mean**n / math.factorial(n)
    return math.exp(n * math.log(mean) - mean - float(gammaln(n + 1)))


def conditional_multinomial(total: int, counts: Sequence[int], rates: Sequence[float]) -> float:
    """
    Multinomial pmf of `counts` given `total` trials and cell probabilities
    proportional to `rates`.
    """
    counts = [int(c) for c in counts]
    rates = [float(r) for r in rates]
    if len(counts) != len(rates):
        raise ValueError("counts and rates must have the same length")
    if any(c < 0 for c in counts):
        raise ValueError("counts must be nonnegative")
    if sum(counts) != total:
        raise ValueError(f"counts sum to {sum(counts)}, expected total={total}")
    if total == 0:
        return 1.0
    if any(not math.isfinite(r) or r <= 0.0 for r in rates):
        raise ValueError("rates must be strictly positive")

    rate_sum = math.fsum(rates)
    log_p = float(gammaln(total + 1))
    for count, rate in zip(counts, rates):
        if count:
            log_p += count * math.log(rate / rate_sum) - float(gammaln(count + 1))
    return math.exp(log_p)


def _uniformized_step(probs: np.ndarray, birth: float, death: float, uniform_rate: float) -> np.ndarray:
    # One application of P = I + Q / uniform_rate for the blocked birth-death generator Q.
    up = birth / uniform_rate
    down = death / uniform_rate
    out = probs.copy()
    out[:-1] -= up * probs[:-1]
    out[1:] -= down * probs[1:]
    out[1:] += up * probs[:-1]
    out[:-1] += down * probs[1:]
    return out


def _propagate_interval(probs: np.ndarray, birth: float, death: float, dt: float) -> np.ndarray:
    uniform_rate = birth + death
    poisson_mean = uniform_rate * dt
    weight = math.exp(-poisson_mean)
    accumulated = weight
    current = probs
    result = weight * current
    n = 0
    while accumulated < 1.0 - TRUNCATION_TOLERANCE:
        n += 1
        current = _uniformized_step(current, birth, death, uniform_rate)
        weight *= poisson_mean / n
        accumulated += weight
        result += weight * current
        if weight == 0.0 and n > poisson_mean:
            break
    return result


def propagate_birth_death(dist: QueueDistribution, birth: float, death: float, dt: float) -> QueueDistribution:
    """
    Transient distribution after `dt` seconds of a birth-death chain on
    {0..capacity} with births blocked at capacity and deaths blocked at 0.
    """
    for name, value in (("birth", birth), ("death", death)):
        if not math.isfinite(value) or value < 0.0:
            raise ValueError(f"{name} rate must be a finite nonnegative number, got {value}")
    if not math.isfinite(dt) or dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if birth == 0.0 and death == 0.0:
        return dist

    uniform_rate = birth + death
    pieces = max(1, math.ceil(uniform_rate * dt / MAX_UNIFORMIZED_MEAN))
    sub_dt = dt / pieces
    probs = np.array(dist.probs, dtype=float)
    for _ in range(pieces):
        probs = _propagate_interval(probs, birth, death, sub_dt)

    total = float(probs.sum())
    if abs(total - 1.0) > HEALTH_TOLERANCE:
        logger.warning(
            "Birth-death propagation lost normalization (sum=%.9f, birth=%.4g, death=%.4g, dt=%.4g)",
            total,
            birth,
            death,
            dt,
        )
    return QueueDistribution.from_weights(probs, dist.capacity)


def mix_distributions(first: QueueDistribution, second: QueueDistribution, weight: float) -> QueueDistribution:
    """Convex combination weight*first + (1-weight)*second, renormalized."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"mixture weight must lie in [0, 1], got {weight}")
    if first.capacity != second.capacity:
        raise ValueError("cannot mix distributions with different capacities")
    if weight == 1.0:
        return first
    if weight == 0.0:
        return second
    return QueueDistribution.from_weights(weight * first.probs + (1.0 - weight) * second.probs, first.capacity)
