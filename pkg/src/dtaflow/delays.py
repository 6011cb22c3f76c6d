"""Effective path delays: travel time plus schedule (early/late) penalty."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np

from .dnl import DNLResult
from .network import Network


@dataclass(frozen=True)
class PenaltyParams:
    """Piecewise-linear schedule penalty weights, in cost-seconds per second
    of early/late arrival."""

    early_weight: float = 0.5
    late_weight: float = 2.0

    def __post_init__(self):
        if self.early_weight < 0 or self.late_weight < 0:
            raise ValueError("penalty weights must be nonnegative")


@dataclass
class DelayProfile:
    """Generalized cost psi[p, k] (seconds) per path and departure step."""

    psi: np.ndarray
    path_order: tuple


def arrival_penalty(arrival_s: float, target_s: float, params: PenaltyParams) -> float:
    """Cost of arriving off-target: early and late sides weighted separately."""
    return params.early_weight * max(0.0, target_s - arrival_s) + \
        params.late_weight * max(0.0, arrival_s - target_s)


def truncation_sentinel(grid_t0: float, grid_tf: float, dep_t: float,
                        params: PenaltyParams) -> float:
    """Large finite cost for trips that do not finish within the horizon,
    dominating any completed trip's cost."""
    horizon = grid_tf - grid_t0
    return (grid_tf - dep_t) + max(params.early_weight, params.late_weight) * horizon


def effective_delay(result: DNLResult, network: Network,
                    params: PenaltyParams = PenaltyParams()) -> DelayProfile:
    """Travel time plus arrival penalty against each O-D pair's target time.

    Horizon-truncated cells receive a finite sentinel cost so downstream
    updates push flow away from them.
    """
    target: Dict[str, float] = {}
    for od in network.od_pairs:
        for pid in od.paths:
            target[pid] = od.target_arrival_s

    grid = result.grid
    dep_times = grid.times()[: grid.n_steps]
    psi = np.empty_like(result.travel_time)
    for p, pid in enumerate(result.path_order):
        tt = result.travel_time[p]
        arr = dep_times + tt
        t_a = target.get(pid)
        if t_a is None:
            raise ValueError(f"path {pid} belongs to no O-D pair")
        pen = params.early_weight * np.maximum(0.0, t_a - arr) + \
            params.late_weight * np.maximum(0.0, arr - t_a)
        row = tt + pen
        bad = result.truncated[p]
        if bad.any():
            row[bad] = [
                truncation_sentinel(grid.t0_s, grid.tf_s, t, params)
                for t in dep_times[bad]
            ]
        psi[p] = row
    return DelayProfile(psi, result.path_order)
