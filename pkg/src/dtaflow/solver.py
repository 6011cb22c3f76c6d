"""Fixed-point iteration for route-and-departure-time user equilibrium.

Each iteration loads the network, evaluates effective delays, and projects
h - alpha * psi back onto the demand-feasible set. The projection decomposes
per O-D pair into a clamp with a scalar dual shift found by bisection on a
monotone piecewise-linear residual.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .delays import DelayProfile, PenaltyParams, effective_delay
from .dnl import DNLResult, run_dnl
from .network import Network, TimeGrid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    alpha: float = 1e-4  # step size, veh/s per cost-second
    epsilon: float = 1e-4  # relative-gap termination threshold
    max_iters: int = 100
    br_tolerance: float = 0.0  # indifference band, cost-seconds
    bisect_tol: float = 1e-8  # dual residual tolerance, relative to Q
    used_flow_threshold: float = 1e-6  # fraction of row max defining "used"
    junction_model: str = "fifo_priority"
    penalty: PenaltyParams = field(default_factory=PenaltyParams)
    initial_window_s: Optional[Tuple[float, float]] = None  # default: full horizon

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("step size alpha must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.br_tolerance < 0:
            raise ValueError("br_tolerance must be nonnegative")


@dataclass
class SolveReport:
    converged: bool
    iterations_used: int
    relative_gap_history: List[float]
    od_gaps: Dict[Tuple[str, str], float]
    h_final: np.ndarray
    psi_final: np.ndarray
    path_order: tuple
    dnl_time_s: float
    update_time_s: float
    final_dnl: Optional[DNLResult] = None


def init_departures(network: Network, grid: TimeGrid,
                    window: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """Uniform feasible start: each O-D's demand spread evenly over its paths
    and over the departure window (full horizon by default)."""
    N = grid.n_steps
    path_ids = tuple(network.paths)
    pidx = {p: i for i, p in enumerate(path_ids)}
    h = np.zeros((len(path_ids), N))
    times = grid.times()[:N]
    if window is None:
        mask = np.ones(N, dtype=bool)
    else:
        lo, hi = window
        mask = (times >= lo) & (times < hi)
        if not mask.any():
            raise ValueError("initial departure window contains no grid steps")
    n_active = int(mask.sum())
    for od in network.od_pairs:
        if od.demand_veh == 0:
            continue
        if not od.paths:
            raise ValueError(
                f"O-D ({od.origin}, {od.destination}) has demand but no paths"
            )
        rate = od.demand_veh / (len(od.paths) * n_active * grid.dt_s)
        for pid in od.paths:
            h[pidx[pid], mask] = rate
    return h


def dual_residual(h_block: np.ndarray, psi_block: np.ndarray, x: float,
                  q_veh: float, alpha: float, dt_s: float) -> float:
    """G(x): projected demand at dual shift x minus the target demand.
    Continuous, nondecreasing and piecewise linear in x."""
    z = h_block - alpha * psi_block + x
    return float(np.maximum(z, 0.0).sum() * dt_s - q_veh)


def solve_dual(h_block: np.ndarray, psi_block: np.ndarray, q_veh: float,
               alpha: float, dt_s: float, tol: float) -> float:
    """Root of G by bracketing then bisection, to |G| <= tol * Q."""
    if q_veh <= 0:
        return 0.0
    z = h_block - alpha * psi_block
    x_lo = float(-z.max())  # G(x_lo) = -Q < 0
    horizon = h_block.shape[-1] * dt_s
    x_hi = max(q_veh / horizon, 1e-12)
    g = dual_residual(h_block, psi_block, x_hi, q_veh, alpha, dt_s)
    guard = 0
    while g < 0:
        x_hi = x_hi * 2 + 1.0
        g = dual_residual(h_block, psi_block, x_hi, q_veh, alpha, dt_s)
        guard += 1
        if guard > 200:
            raise RuntimeError("failed to bracket the dual root")
    target = tol * q_veh
    for _ in range(200):
        x_mid = 0.5 * (x_lo + x_hi)
        g = dual_residual(h_block, psi_block, x_mid, q_veh, alpha, dt_s)
        if abs(g) <= target:
            return x_mid
        if g < 0:
            x_lo = x_mid
        else:
            x_hi = x_mid
    return 0.5 * (x_lo + x_hi)


def _od_blocks(network: Network, path_order: tuple) -> Dict[Tuple[str, str], np.ndarray]:
    pidx = {p: i for i, p in enumerate(path_order)}
    return {
        (od.origin, od.destination): np.array([pidx[p] for p in od.paths], dtype=int)
        for od in network.od_pairs
    }


def fixed_point_update(h: np.ndarray, psi: np.ndarray, network: Network,
                       grid: TimeGrid, config: SolverConfig,
                       path_order: tuple) -> np.ndarray:
    """One projection step h <- [h - alpha*psi + v]_+ per O-D pair.

    With a positive indifference band, cells whose cost sits within the band
    of the O-D minimum keep their current rate and only the remaining cells
    are re-projected onto the leftover demand.
    """
    dt = grid.dt_s
    out = h.copy()
    blocks = _od_blocks(network, path_order)
    for od in network.od_pairs:
        rows = blocks[(od.origin, od.destination)]
        if len(rows) == 0 or od.demand_veh <= 0:
            out[rows] = 0.0
            continue
        hb = h[rows]
        pb = psi[rows]
        eta = config.br_tolerance
        if eta > 0:
            keep = pb <= pb.min() + eta
            kept_demand = float(hb[keep].sum() * dt)
            q_rest = od.demand_veh - kept_demand
            upd = out[rows]
            if q_rest <= 1e-12 * od.demand_veh or keep.all():
                # band already carries the whole demand: zero the rest and
                # scale kept cells back onto the constraint
                upd[:] = 0.0
                if kept_demand > 0:
                    upd[keep] = hb[keep] * (od.demand_veh / kept_demand)
            else:
                v = solve_dual(hb[~keep], pb[~keep], q_rest, config.alpha, dt,
                               config.bisect_tol)
                upd[:] = np.maximum(hb - config.alpha * pb + v, 0.0)
                upd[keep] = hb[keep]
            out[rows] = upd
        else:
            v = solve_dual(hb, pb, od.demand_veh, config.alpha, dt,
                           config.bisect_tol)
            out[rows] = np.maximum(hb - config.alpha * pb + v, 0.0)
    return out


def relative_gap(h_new: np.ndarray, h_old: np.ndarray, dt_s: float) -> float:
    """Squared discrete-L2 distance between iterates, relative to the old."""
    num = float(((h_new - h_old) ** 2).sum() * dt_s)
    den = float((h_old ** 2).sum() * dt_s)
    if den == 0:
        return 0.0 if num == 0 else float("inf")
    return num / den


def od_gap(h: np.ndarray, psi: np.ndarray, network: Network, path_order: tuple,
           used_threshold: float = 1e-6) -> Dict[Tuple[str, str], float]:
    """Per O-D spread (max - min) of cost over used departure cells."""
    blocks = _od_blocks(network, path_order)
    gaps: Dict[Tuple[str, str], float] = {}
    for key, rows in blocks.items():
        if len(rows) == 0:
            gaps[key] = 0.0
            continue
        hb = h[rows]
        peak = hb.max()
        used = hb > used_threshold * peak if peak > 0 else np.zeros_like(hb, bool)
        if not used.any():
            logger.warning("O-D %s has no used departure cells", key)
            gaps[key] = 0.0
            continue
        vals = psi[rows][used]
        gaps[key] = float(vals.max() - vals.min())
    return gaps


def _alpha_heuristic_check(h: np.ndarray, psi: np.ndarray, alpha: float) -> None:
    hm = np.median(h[h > 0]) if (h > 0).any() else 0.0
    pm = np.median(psi[np.isfinite(psi)])
    if hm > 0 and pm > 0:
        ratio = alpha * pm / hm
        if ratio > 100 or ratio < 0.01:
            logger.warning(
                "alpha * median(cost) = %.3g is far from median departure rate "
                "%.3g; consider rescaling the step size", alpha * pm, hm,
            )


def solve_due(network: Network, grid: TimeGrid, config: SolverConfig,
              h0: Optional[np.ndarray] = None) -> SolveReport:
    """Iterate loading -> delays -> projection until the relative gap falls
    below epsilon or the iteration cap is reached."""
    path_order = tuple(network.paths)
    if h0 is None:
        h = init_departures(network, grid, config.initial_window_s)
    else:
        h = np.asarray(h0, dtype=float).copy()

    gaps_hist: List[float] = []
    dnl_time = 0.0
    upd_time = 0.0
    converged = False
    psi = None
    for it in range(config.max_iters):
        t0 = time.perf_counter()
        result = run_dnl(network, h, grid, config.junction_model)
        profile = effective_delay(result, network, config.penalty)
        psi = profile.psi
        dnl_time += time.perf_counter() - t0

        if it == 0:
            _alpha_heuristic_check(h, psi, config.alpha)

        t0 = time.perf_counter()
        h_new = fixed_point_update(h, psi, network, grid, config, path_order)
        upd_time += time.perf_counter() - t0

        eps_k = relative_gap(h_new, h, grid.dt_s)
        gaps_hist.append(eps_k)
        h = h_new
        if eps_k <= config.epsilon:
            converged = True
            break

    if not converged:
        logger.info("fixed-point iteration stopped at the cap without converging")

    # one extra loading to report delays and gaps consistent with h_final
    t0 = time.perf_counter()
    result = run_dnl(network, h, grid, config.junction_model)
    psi_final = effective_delay(result, network, config.penalty).psi
    dnl_time += time.perf_counter() - t0
    gaps = od_gap(h, psi_final, network, path_order, config.used_flow_threshold)

    return SolveReport(
        converged=converged,
        iterations_used=len(gaps_hist),
        relative_gap_history=gaps_hist,
        od_gaps=gaps,
        h_final=h,
        psi_final=psi_final,
        path_order=path_order,
        dnl_time_s=dnl_time,
        update_time_s=upd_time,
        final_dnl=result,
    )
