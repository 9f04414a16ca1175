"""Building sparse SMBG samples from dense CGM grids.

Three strategies: Bernoulli random masking, active selection (selector scores
plus separation-constrained top-K per day) and a per-day hybrid of the two.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from glyco.domain import CgmGrid, SmbgSample
from glyco.errors import ConfigurationError, ConstraintError, ParameterError

STRATEGIES = ("random", "hybrid", "active")


@dataclass(frozen=True)
class SelectionConstraint:
    k: int = 5
    delta: int = 12

    def __post_init__(self):
        if self.k < 1 or self.delta < 0:
            raise ParameterError(f"need k >= 1 and delta >= 0, got k={self.k}, delta={self.delta}")

    def min_length(self) -> int:
        return (self.k - 1) * max(self.delta, 1) + 1

    def check(self, T: int) -> None:
        if T < self.min_length():
            raise ConstraintError(
                f"cannot place K={self.k} points with separation delta={self.delta} in T={T} slots "
                f"(needs T >= {self.min_length()})"
            )


@dataclass(frozen=True)
class SamplingPlan:
    strategy: str = "random"
    rate: float = 0.028
    gamma_h: float = 0.0
    k_per_day: int = 5
    delta: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ParameterError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not 0 < self.rate <= 1:
            raise ParameterError(f"rate must be in (0, 1], got {self.rate}")
        if not 0 <= self.gamma_h <= 1:
            raise ParameterError(f"gamma_h must be in [0, 1], got {self.gamma_h}")
        if self.k_per_day < 1:
            raise ParameterError("k_per_day must be >= 1")

    @property
    def constraint(self) -> SelectionConstraint:
        return SelectionConstraint(self.k_per_day, self.delta)

    def describe(self) -> str:
        if self.strategy == "random":
            return f"random(rate={self.rate:g})"
        if self.strategy == "active":
            return f"active(k={self.k_per_day},delta={self.delta})"
        return f"hybrid(gamma_h={self.gamma_h:g},rate={self.rate:g},k={self.k_per_day},delta={self.delta})"


class Selector(Protocol):
    def score_days(self, days_mgdl: np.ndarray) -> np.ndarray:
        """Importance scores in [0, 1] for each slot of each day (n_days x T)."""


def random_mask(grid: CgmGrid, rate: float, seed: int = 0) -> SmbgSample:
    """Keep each slot independently with probability ``rate``."""
    if not 0 < rate <= 1:
        raise ParameterError(f"rate must be in (0, 1], got {rate}")
    u = np.random.default_rng(seed).random(grid.values.shape)
    return SmbgSample.from_observations(
        grid.values, u < rate, origin="random-selected", patient_id=grid.patient_id, window_start=grid.window_start
    )


def select_topk_separated(scores, c: SelectionConstraint = SelectionConstraint()) -> list[int]:
    """Exact maximiser of the summed score over K slots pairwise >= delta apart.

    Dynamic programme over (slot, picks remaining); among optimal sets the
    lexicographically smallest one is returned.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    T = s.size
    c.check(T)
    step = max(c.delta, 1)
    K = c.k
    # best[k][i]: best total choosing k slots from i..T-1
    best = np.full((K + 1, T + step + 1), -np.inf)
    best[0, :] = 0.0
    for k in range(1, K + 1):
        row, prev = best[k], best[k - 1]
        for i in range(T - 1, -1, -1):
            take = s[i] + prev[i + step]
            skip = row[i + 1]
            row[i] = take if take >= skip else skip
    picks = []
    i, k = 0, K
    while k > 0:
        if s[i] + best[k - 1, i + step] >= best[k, i + 1]:
            picks.append(i)
            i += step
            k -= 1
        else:
            i += 1
    return picks


def topk_separated_bruteforce(scores, c: SelectionConstraint) -> list[int]:
    """Exhaustive reference: first feasible combination with the maximal sum."""
    s = [float(v) for v in np.asarray(scores).ravel()]
    c.check(len(s))
    best_val, best_set = -math.inf, None
    for combo in itertools.combinations(range(len(s)), c.k):
        if any(b - a < c.delta for a, b in zip(combo, combo[1:])):
            continue
        val = sum(s[i] for i in combo)
        if val > best_val:
            best_val, best_set = val, list(combo)
    return best_set


def active_days(n_days: int, gamma_h: float, seed: int) -> np.ndarray:
    """Sorted indices of the ceil(gamma_h * D) days that receive active selection."""
    n_active = min(n_days, math.ceil(gamma_h * n_days - 1e-12))
    rng = np.random.default_rng((seed, 0xA7))
    return np.sort(rng.choice(n_days, size=n_active, replace=False)) if n_active else np.array([], dtype=int)


def _select_days(values: np.ndarray, days: np.ndarray, selector: Selector, c: SelectionConstraint) -> np.ndarray:
    observed = np.zeros(values.shape, dtype=bool)
    if len(days) == 0:
        return observed
    scores = np.asarray(selector.score_days(values[days]))
    for d, sc in zip(days, scores):
        observed[d, select_topk_separated(sc, c)] = True
    return observed


def hybrid_sample(grid: CgmGrid, plan: SamplingPlan, selector: Selector | None = None) -> SmbgSample:
    """Active selection on a random ceil(gamma_h * D) subset of days, random masking elsewhere."""
    values = grid.values
    D = values.shape[0]
    days = active_days(D, plan.gamma_h, plan.seed)
    if len(days) and selector is None:
        raise ConfigurationError("hybrid sampling with gamma_h > 0 needs a trained selector")
    u = np.random.default_rng(plan.seed).random(values.shape)
    observed = u < plan.rate
    if len(days):
        observed[days] = False
        observed |= _select_days(values, days, selector, plan.constraint)
    return SmbgSample.from_observations(
        values,
        observed,
        origin="hybrid-selected",
        patient_id=grid.patient_id,
        window_start=grid.window_start,
        meta={"active_days": [int(d) for d in days]},
    )


def active_sample(grid: CgmGrid, plan: SamplingPlan, selector: Selector | None) -> SmbgSample:
    if selector is None:
        raise ConfigurationError("active sampling needs a trained selector")
    observed = _select_days(grid.values, np.arange(grid.days), selector, plan.constraint)
    return SmbgSample.from_observations(
        grid.values, observed, origin="active-selected", patient_id=grid.patient_id, window_start=grid.window_start
    )


def apply_plan(grid: CgmGrid, plan: SamplingPlan, selector: Selector | None = None) -> SmbgSample:
    if plan.strategy == "random":
        return random_mask(grid, plan.rate, plan.seed)
    if plan.strategy == "hybrid":
        return hybrid_sample(grid, plan, selector)
    return active_sample(grid, plan, selector)
