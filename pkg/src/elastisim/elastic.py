"""Elastic parameter exchange and the dynamic weighting law.

A worker and the master pull toward each other with weights (h1, h2): the
worker moves h1 of the gap, the master absorbs h2 of it. The fixed variant
uses (alpha, alpha) always. The dynamic variant scores the recent trend of
u = log ||worker - master_estimate||: a weighted sum `a` of consecutive
differences is mapped through two piecewise-linear functions so that a
strongly falling distance (a below the negative threshold) snaps the worker
onto the master (h1 -> 1) while shielding the master (h2 -> 0), and a
rising or flat trend (a > 0) reproduces the fixed exchange exactly. The
oracle variant skips detection: it applies (1, 0) on the first successful
exchange after any missed one.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientHistoryError, ShapeError
from .model import ParamVector

VARIANTS = ("fixed", "dynamic", "oracle")

# distances below this count as zero when taking the log
LOG_DISTANCE_FLOOR = 1e-12


def default_coeffs(depth: int) -> tuple[float, ...]:
    """Exponentially decaying difference weights, newest first, summing to 1."""
    raw = [2.0**-j for j in range(depth)]
    total = sum(raw)
    return tuple(c / total for c in raw)


@dataclass(frozen=True)
class ElasticConfig:
    """Moving rate, score map shape, history depth, and variant selector."""

    alpha: float = 0.1
    score_threshold: float = -1.0
    history_depth: int = 4
    coeffs: tuple[float, ...] = None
    variant: str = "fixed"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.score_threshold >= 0.0:
            raise ConfigError("score threshold must be negative")
        if self.history_depth < 1:
            raise ConfigError("history depth must be positive")
        coeffs = self.coeffs
        if coeffs is None:
            coeffs = default_coeffs(self.history_depth)
        coeffs = tuple(float(c) for c in coeffs)
        object.__setattr__(self, "coeffs", coeffs)
        if len(coeffs) != self.history_depth:
            raise ConfigError("need one coefficient per history difference")
        if any(c < 0 for c in coeffs):
            raise ConfigError("coefficients must be non-negative")
        if abs(sum(coeffs) - 1.0) > 1e-12:
            raise ConfigError(f"coefficients must sum to 1, got {sum(coeffs)}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")


class DistanceHistory:
    """Ring buffer of the p+1 most recent log-distance values."""

    def __init__(self, depth: int):
        if depth < 1:
            raise ConfigError("history depth must be positive")
        self.depth = depth
        self.values = deque(maxlen=depth + 1)
        self.count = 0

    def __len__(self):
        return len(self.values)


def update_history(
    history: DistanceHistory, worker_params: ParamVector, master_estimate: ParamVector
) -> DistanceHistory:
    """Append u = log ||worker - estimate||, floored to keep u finite."""
    if worker_params.shape_table != master_estimate.shape_table:
        raise ShapeError("worker and master estimate layouts differ")
    dist = float(np.linalg.norm(worker_params.values - master_estimate.values))
    history.values.append(math.log(max(dist, LOG_DISTANCE_FLOOR)))
    history.count += 1
    return history


def raw_score(history: DistanceHistory, coeffs) -> float:
    """Weighted sum of consecutive u differences, newest difference first.

    With fewer than len(coeffs) differences available, the missing oldest
    terms contribute zero and the present coefficients are used unscaled,
    biasing a short history toward the fixed-exchange regime.
    """
    u = list(history.values)
    if len(u) < 2:
        raise InsufficientHistoryError("need at least two distance entries")
    a = 0.0
    for j in range(min(len(coeffs), len(u) - 1)):
        a += coeffs[j] * (u[-1 - j] - u[-2 - j])
    return a


def map_h1(a: float, alpha: float, kappa: float) -> float:
    """Worker-side pull weight: 1 below kappa, alpha above 0, linear between.

    The linear branch is clamped to [alpha, 1] so rounding near the branch
    points can never leave the contracted range.
    """
    if a < kappa:
        return 1.0
    if a > 0.0:
        return alpha
    return min(1.0, max(alpha, 1.0 + (1.0 - alpha) / kappa * (a - kappa)))


def map_h2(a: float, alpha: float, kappa: float) -> float:
    """Master-side pull weight: 0 below kappa, alpha above 0, linear between."""
    if a < kappa:
        return 0.0
    if a > 0.0:
        return alpha
    return min(alpha, max(0.0, -(alpha / kappa) * a + alpha))


@dataclass(frozen=True)
class WeightPair:
    """Applied exchange weights; h1 in [alpha, 1], h2 in [0, alpha]."""

    h1: float
    h2: float


def select_weights(
    config: ElasticConfig, history: DistanceHistory, oracle_failed_flag: bool = False
) -> WeightPair:
    """Exchange weights for one attempt under the configured variant.

    fixed: always (alpha, alpha). dynamic: piecewise maps of the raw score,
    falling back to (alpha, alpha) until the history holds two entries.
    oracle: (1, 0) when the caller knows this worker just recovered from a
    missed exchange, else (alpha, alpha).
    """
    if config.variant == "oracle":
        if oracle_failed_flag:
            return WeightPair(1.0, 0.0)
        return WeightPair(config.alpha, config.alpha)
    if config.variant == "dynamic":
        try:
            a = raw_score(history, config.coeffs)
        except InsufficientHistoryError:
            return WeightPair(config.alpha, config.alpha)
        return WeightPair(
            map_h1(a, config.alpha, config.score_threshold),
            map_h2(a, config.alpha, config.score_threshold),
        )
    return WeightPair(config.alpha, config.alpha)


def elastic_exchange(
    worker_params: ParamVector, master_params: ParamVector, weights: WeightPair
) -> tuple[ParamVector, ParamVector]:
    """Apply one exchange; returns (new_worker, new_master).

    The gap shrinks by exactly |1 - h1 - h2|; with h1 = h2 the pair sum is
    conserved.
    """
    if worker_params.shape_table != master_params.shape_table:
        raise ShapeError("worker and master layouts differ")
    if not (0.0 <= weights.h2 <= weights.h1 <= 1.0):
        raise ConfigError(f"weights out of range: {weights}")
    diff = worker_params.values - master_params.values
    new_worker = worker_params.like(worker_params.values - weights.h1 * diff)
    new_master = master_params.like(master_params.values + weights.h2 * diff)
    return new_worker, new_master
