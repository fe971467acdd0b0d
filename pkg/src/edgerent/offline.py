"""Offline-optimal schedules and the exhaustive oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigError,
    CostBreakdown,
    CostParams,
    HostingSchedule,
    Instance,
    evaluate_schedule,
)

BRUTE_FORCE_LIMIT = 2_000_000

# relative slack when comparing DP path costs, so that ties resolve by the
# documented rule rather than by rounding noise
_TIE_REL = 1e-12


@dataclass(frozen=True)
class DpTable:
    """best_cost[t, i]: cheapest cost of slots 1..t ending at level i; pred[t, i]: level at t-1."""

    best_cost: np.ndarray
    pred: np.ndarray

    def backtrack(self) -> HostingSchedule:
        T, K = self.best_cost.shape
        last = self.best_cost[-1]
        # lowest level among (near-)minimal final costs
        i = int(np.flatnonzero(last <= last.min() * (1 + _TIE_REL) + _TIE_REL)[0])
        out = np.empty(T, dtype=np.int64)
        for t in range(T - 1, -1, -1):
            out[t] = i
            i = int(self.pred[t, i])
        return HostingSchedule(out)


def slot_cost_matrix(instance: Instance, params: CostParams) -> np.ndarray:
    """T x K Model-1 cost of holding each level in each slot (rent + service)."""
    a = params.levels.fractions
    g = params.levels.forward_costs
    xbar, over = instance.capped(params.kappa)
    return np.outer(instance.rents, a) + np.outer(xbar, g) + over[:, None]


def transition_matrix(params: CostParams) -> np.ndarray:
    """K x K fetch cost from level i (row) to level j (column)."""
    a = params.levels.fractions
    return params.M * np.maximum(a[None, :] - a[:, None], 0.0)


def dp_table(instance: Instance, params: CostParams) -> DpTable:
    if instance.T == 0:
        raise ConfigError("empty instance")
    cost = slot_cost_matrix(instance, params)
    trans = transition_matrix(params)
    T, K = cost.shape
    best = np.empty((T, K))
    pred = np.zeros((T, K), dtype=np.int64)
    best[0] = trans[0] + cost[0]
    for t in range(1, T):
        cand = best[t - 1][:, None] + trans  # rows: predecessor
        m = cand.min(axis=0)
        # among near-ties prefer the lowest predecessor index: when the level
        # goes up that means staying low longer, i.e. fetching later
        ok = cand <= m * (1 + _TIE_REL) + _TIE_REL
        pred[t] = ok.argmax(axis=0)
        best[t] = cand[pred[t], np.arange(K)] + cost[t]
    return DpTable(best, pred)


def optimal_schedule(instance: Instance, params: CostParams) -> tuple[HostingSchedule, CostBreakdown]:
    """Minimum-cost schedule under Model 1 via shortest path over (slot, level)."""
    instance.check(params)
    sched = dp_table(instance, params).backtrack()
    return sched, evaluate_schedule(sched, instance, params)


def brute_force_schedule(instance: Instance, params: CostParams) -> tuple[HostingSchedule, CostBreakdown]:
    """Enumerate every level assignment. Oracle for small instances only."""
    instance.check(params)
    T, K = instance.T, len(params.levels)
    if K**T > BRUTE_FORCE_LIMIT:
        raise ConfigError(f"K^T = {K}^{T} exceeds {BRUTE_FORCE_LIMIT}")
    a = params.levels.fractions
    g = params.levels.forward_costs
    xbar, over = instance.capped(params.kappa)
    # all schedules as rows, lexicographic in level index
    grid = np.indices((K,) * T).reshape(T, -1).T
    lv = a[grid]
    prev = np.concatenate([np.zeros((len(grid), 1)), lv[:, :-1]], axis=1)
    fetch = params.M * np.maximum(lv - prev, 0.0).sum(axis=1)
    run = (lv * instance.rents).sum(axis=1) + (g[grid] * xbar).sum(axis=1) + over.sum()
    total = fetch + run
    best = int(np.argmin(total))
    sched = HostingSchedule(grid[best])
    return sched, evaluate_schedule(sched, instance, params)


def hosting_runs(schedule: HostingSchedule) -> list[tuple[int, int, int]]:
    """Maximal constant runs above level 0 as (start, length, level), 1-based start."""
    s = schedule.level_index.tolist()
    runs = []
    t = 0
    while t < len(s):
        j = t
        while j + 1 < len(s) and s[j + 1] == s[t]:
            j += 1
        if s[t] > 0:
            runs.append((t + 1, j - t + 1, s[t]))
        t = j + 1
    return runs


def min_hosting_run(schedule: HostingSchedule) -> int:
    """Shortest maximal run at a level above 0; T+1 when nothing is hosted."""
    runs = hosting_runs(schedule)
    return min((n for _, n, _ in runs), default=schedule.T + 1)


def two_level_run_bound(params: CostParams) -> int | None:
    """ceil(M/(kappa - c_min)) for two levels, or None if kappa <= c_min."""
    if not params.kappa > params.c_min:
        return None
    if params.kappa == math.inf:
        return 1
    return math.ceil(params.M / (params.kappa - params.c_min))


def level_change_run_bound(params: CostParams, lo: int, hi: int) -> int | None:
    """Minimum optimal run length at level `hi` entered from level `lo`.

    Equals ceil(b*M / ((g(a) - g(a+b)) * kappa - b*c_min)) with a, a+b the two
    fractions; with kappa = 1 this is bM/(g(a) - g(a+b) - b c_min). None when
    the denominator is not positive. The bound applies to runs that return to
    `lo` afterwards or end at the horizon, since only then can the run be
    replaced wholesale by staying at `lo`.
    """
    a = params.levels.fractions
    g = params.levels.forward_costs
    b = a[hi] - a[lo]
    if b <= 0:
        return None
    kappa = params.kappa
    if kappa == math.inf:
        return 1
    den = (g[lo] - g[hi]) * kappa - b * params.c_min
    if den <= 0:
        return None
    return math.ceil(b * params.M / den)
