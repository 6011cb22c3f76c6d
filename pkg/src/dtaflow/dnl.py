"""Time-stepping network loading engine.

Link dynamics are tracked purely through cumulative boundary counts
(entering N_up, exiting N_dn). Demands and supplies come from lagged
lookups on those curves, junction flows from the pluggable junction model,
and path travel times from chained horizontal differences between the
curves (origin queue first, then links in path order).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .junctions import DistributionMatrix, JunctionIO, get_junction_model
from .network import Link, Network, TimeGrid

logger = logging.getLogger(__name__)

COUNT_TOL = 1e-9  # veh; equality tolerance on cumulative counts
_FLOW_EPS = 1e-12  # veh/s; below this a rate is treated as "no flow to label"

SINK = -1  # next-hop marker: path leaves the network at this node
NO_HOP = -2  # next-hop marker: path does not traverse the link


class DNLError(RuntimeError):
    """Raised when the loading run detects an internal inconsistency."""


Composition = Tuple[np.ndarray, np.ndarray]  # (path indices, fractions)


@dataclass
class LinkState:
    """Cumulative-count trace of one link over the grid.

    n_up/n_dn live on the N+1 grid knots; inflow/outflow/entry_composition
    are per step (length N). entry_composition[k] is None when the step had
    no inflow.
    """

    link: Link
    n_up: np.ndarray
    n_dn: np.ndarray
    inflow: np.ndarray
    outflow: np.ndarray
    entry_composition: List[Optional[Composition]]


@dataclass
class OriginState:
    """Point-queue trace of one origin over the grid."""

    node_id: str
    queue_veh: np.ndarray  # per knot
    cum_departures: np.ndarray  # per knot
    cum_served: np.ndarray  # per knot
    queue_composition: List[Optional[Composition]]  # served-flow composition per step


@dataclass
class DNLResult:
    grid: TimeGrid
    path_order: Tuple[str, ...]
    travel_time: np.ndarray  # (|P|, N), seconds; NaN where trip not completed
    arrival_time: np.ndarray  # (|P|, N)
    link_states: Dict[str, LinkState]
    origin_states: Dict[str, OriginState]
    diagnostics: np.ndarray  # per-knot relative vehicle-balance residual
    truncated: np.ndarray  # bool (|P|, N)


# -- elementary curve operations ----------------------------------------------


def _interp(times: np.ndarray, curve: np.ndarray, t: float) -> float:
    if t <= times[0]:
        return float(curve[0])
    if t >= times[-1]:
        return float(curve[-1])
    return float(np.interp(t, times, curve))


def _inverse_cum(times: np.ndarray, curve: np.ndarray, y) -> np.ndarray:
    """Earliest time at which the nondecreasing piecewise-linear `curve`
    reaches `y`; NaN where y exceeds the recorded maximum."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.full(y.shape, np.nan)
    valid = ~np.isnan(y)
    reach = valid & (y <= curve[-1])
    idx = np.searchsorted(curve, y[reach], side="left")
    t = np.empty(idx.shape)
    at_start = idx == 0
    t[at_start] = times[0]
    ii = idx[~at_start]
    c0 = curve[ii - 1]
    c1 = curve[ii]
    yy = y[reach][~at_start]
    t[~at_start] = times[ii - 1] + (yy - c0) / (c1 - c0) * (times[ii] - times[ii - 1])
    out[reach] = t
    return out


def entry_time(state: LinkState, grid: TimeGrid, t: float,
               count_tol: float = COUNT_TOL) -> float:
    """Entry time tau(t) of the vehicle exiting at t: N_up(tau) = N_dn(t)."""
    times = grid.times()
    y = _interp(times, state.n_dn, t)
    tau = float(_inverse_cum(times, state.n_up, y - count_tol)[0])
    return min(tau, t)


def exit_time(state: LinkState, grid: TimeGrid, t: float,
              count_tol: float = COUNT_TOL) -> float:
    """Exit time lambda(t) of the vehicle entering at t: N_dn(lambda) = N_up(t).

    Returns NaN (unresolved exit) when the vehicle has not left by the end
    of the horizon. Degenerates to the free-flow continuation t + L/v on an
    empty link.
    """
    times = grid.times()
    y = _interp(times, state.n_up, t)
    lam = float(_inverse_cum(times, state.n_dn, y - count_tol)[0])
    ff = t + state.link.free_flow_time_s
    if math.isnan(lam):
        return math.nan
    lam = max(lam, ff)
    return lam if lam <= grid.tf_s + 1e-9 else math.nan


def _lagged_rate(times: np.ndarray, curve: np.ndarray, s: float, t: float,
                 dt_s: float) -> float:
    """Average slope of a cumulative curve over [s, min(s + dt, t)].

    This is the discrete stand-in for the instantaneous boundary rate at the
    lagged time s; when s falls on a grid knot it reduces to the recorded
    per-step rate, and when it falls mid-step it blends the two neighbouring
    steps instead of snapping to one of them (which can stall flow by a full
    step whenever a lag is not a multiple of dt).
    """
    s1 = min(s + dt_s, t)  # never read knots the loader has not written yet
    return (_interp(times, curve, s1) - _interp(times, curve, s)) / (s1 - s)


def link_demand(link: Link, state: LinkState, grid: TimeGrid, t: float,
                count_tol: float = COUNT_TOL) -> float:
    """Boundary demand: inflow lagged by the free-flow time while the exit is
    uncongested, the capacity otherwise."""
    times = grid.times()
    k = int(round((t - grid.t0_s) / grid.dt_s))
    s = t - link.free_flow_time_s
    if s < grid.t0_s:
        return 0.0
    n_up_lag = _interp(times, state.n_up, s)
    n_dn_now = state.n_dn[k]
    if n_up_lag <= n_dn_now + count_tol:
        return _lagged_rate(times, state.n_up, s, t, grid.dt_s)
    return link.capacity_vps


def link_supply(link: Link, state: LinkState, grid: TimeGrid, t: float,
                count_tol: float = COUNT_TOL) -> float:
    """Boundary supply: capacity until the storage bound binds, then the
    outflow lagged by the backward-wave time."""
    times = grid.times()
    k = int(round((t - grid.t0_s) / grid.dt_s))
    s = t - link.length_m / link.backward_speed_mps
    n_dn_lag = _interp(times, state.n_dn, s) if s >= grid.t0_s else 0.0
    bound = n_dn_lag + link.storage_veh
    if state.n_up[k] >= bound - count_tol:
        return _lagged_rate(times, state.n_dn, s, t, grid.dt_s)
    return link.capacity_vps


def origin_demand(queue_veh: float, departure_rate_vps: float, big_m: float) -> float:
    """Origin boundary demand: effectively unbounded while a queue persists,
    the instantaneous departure rate otherwise."""
    return big_m if queue_veh > 0 else departure_rate_vps


def step_origin_queue(queue_veh: float, departure_rate_vps: float,
                      served_rate_vps: float, dt_s: float) -> float:
    """Forward-Euler point-queue update, clamped at zero."""
    return max(0.0, queue_veh + dt_s * (departure_rate_vps - served_rate_vps))


def propagate_composition(
    contributions: Sequence[Tuple[float, Composition]], total_inflow_vps: float
) -> Optional[Composition]:
    """Entrance composition of a downstream link from (rate, composition)
    contributions of its feeders. None when there is no flow to label."""
    if total_inflow_vps <= _FLOW_EPS:
        return None
    ids_parts = []
    w_parts = []
    for rate, (ids, fr) in contributions:
        if rate <= _FLOW_EPS:
            continue
        ids_parts.append(ids)
        w_parts.append(rate * fr)
    if not ids_parts:
        return None
    cat_ids = np.concatenate(ids_parts)
    cat_w = np.concatenate(w_parts)
    uids, inv = np.unique(cat_ids, return_inverse=True)
    w = np.bincount(inv, weights=cat_w)
    total = w.sum()
    if not math.isclose(total, total_inflow_vps, rel_tol=1e-6, abs_tol=1e-12):
        raise DNLError(
            f"composition mass {total} does not match inflow {total_inflow_vps}"
        )
    return uids.astype(np.int64), w / total


# -- engine --------------------------------------------------------------------


@dataclass
class _Junction:
    node_id: str
    in_links: List[int]
    out_links: List[int]
    has_source: bool
    has_sink: bool
    priorities: np.ndarray  # aligned [in_links..., source?]
    slot_of_hop: np.ndarray  # link index (or n_links for sink) -> outgoing slot


class _Loader:
    def __init__(self, network: Network, departures: np.ndarray, grid: TimeGrid,
                 junction_model: str = "fifo_priority",
                 count_tol: float = COUNT_TOL):
        self.net = network
        self.grid = grid
        self.count_tol = count_tol
        self.model = get_junction_model(junction_model)

        self.path_ids = tuple(network.paths)
        self.pidx = {p: i for i, p in enumerate(self.path_ids)}
        self.link_ids = tuple(network.links)
        self.lidx = {l: i for i, l in enumerate(self.link_ids)}
        self.links = [network.links[l] for l in self.link_ids]
        nP, nL, N = len(self.path_ids), len(self.link_ids), grid.n_steps

        h = np.asarray(departures, dtype=float)
        if h.shape != (nP, N):
            raise DNLError(
                f"departure matrix shape {h.shape} does not match "
                f"(paths, steps) = ({nP}, {N})"
            )
        if np.any(h < 0):
            raise DNLError("departure rates must be nonnegative")
        self.h = h

        if grid.dt_s > network.min_free_flow_time_s:
            logger.warning(
                "time step %.3g s exceeds the minimum link free-flow time %.3g s; "
                "results degrade to one-step resolution on short links",
                grid.dt_s, network.min_free_flow_time_s,
            )

        # next-hop table: next_of[link][path] = next link index, SINK, or NO_HOP
        self.next_of = np.full((nL, nP), NO_HOP, dtype=np.int64)
        for p, pid in enumerate(self.path_ids):
            seq = [self.lidx[l] for l in network.paths[pid].links]
            for a, b in zip(seq, seq[1:]):
                self.next_of[a, p] = b
            self.next_of[seq[-1], p] = SINK
        self.first_link = {}  # origin node -> array over paths (first link or NO_HOP)
        self.origin_paths: Dict[str, np.ndarray] = {}
        for p, pid in enumerate(self.path_ids):
            o = network.paths[pid].od[0]
            self.origin_paths.setdefault(o, [])
            self.origin_paths[o].append(p)
        self.origin_ids = sorted(self.origin_paths)
        for o in self.origin_ids:
            arr = np.array(sorted(self.origin_paths[o]), dtype=np.int64)
            self.origin_paths[o] = arr
            fl = np.full(nP, NO_HOP, dtype=np.int64)
            for p in arr:
                fl[p] = self.lidx[network.paths[self.path_ids[p]].links[0]]
            self.first_link[o] = fl

        self.junctions = self._build_junctions()

        times = grid.times()
        self.times = times
        self.n_up = np.zeros((nL, N + 1))
        self.n_dn = np.zeros((nL, N + 1))
        self.inflow = np.zeros((nL, N))
        self.outflow = np.zeros((nL, N))
        self.comp: List[List[Optional[Composition]]] = [[None] * N for _ in range(nL)]
        # prev_comp[l][k]: latest step <= k with a recorded composition, -1 if none
        self.prev_comp = np.full((nL, N), -1, dtype=np.int64)

        self.queue = np.zeros((len(self.origin_ids), N + 1))
        self.cum_srv = np.zeros((len(self.origin_ids), N + 1))
        self.dep_rate = np.zeros((len(self.origin_ids), N))
        for oi, o in enumerate(self.origin_ids):
            self.dep_rate[oi] = h[self.origin_paths[o]].sum(axis=0)
        self.cum_dep = np.zeros((len(self.origin_ids), N + 1))
        self.cum_dep[:, 1:] = np.cumsum(self.dep_rate, axis=1) * grid.dt_s
        self.oidx = {o: i for i, o in enumerate(self.origin_ids)}
        self.big_m = {
            o: 10.0 * max(
                network.links[l].capacity_vps for l in network.outgoing[o]
            )
            for o in self.origin_ids
        }

        self.exited = np.zeros(N + 1)
        self.balance = np.zeros(N + 1)
        self.srv_comp: List[List[Optional[Composition]]] = [
            [None] * N for _ in self.origin_ids
        ]

    def _build_junctions(self) -> List[_Junction]:
        net = self.net
        nL = len(self.link_ids)
        out: List[_Junction] = []
        for nid, node in net.nodes.items():
            in_links = [self.lidx[l] for l in net.incoming[nid]]
            out_links = [self.lidx[l] for l in net.outgoing[nid]]
            has_source = nid in self.origin_paths
            has_sink = node.destination
            if not in_links and not has_source:
                continue
            if not out_links and not has_sink:
                continue
            pri_map = net.priorities[nid]
            pri = [pri_map[self.link_ids[i]] for i in in_links]
            if node.origin:
                pri.append(pri_map[""])
            elif has_source:
                raise DNLError(f"paths depart from non-origin node {nid}")
            pri = np.asarray(pri, dtype=float)
            if pri.sum() <= 0:
                pri = np.full(len(pri), 1.0 / len(pri))
            pri = pri / pri.sum()
            if node.origin and not has_source:
                pri = pri[:-1]
                total = pri.sum()
                pri = pri / total if total > 0 else np.full(len(pri), 1.0 / max(len(pri), 1))
            slot_of_hop = np.full(nL + 1, -9, dtype=np.int64)
            for s, li in enumerate(out_links):
                slot_of_hop[li] = s
            if has_sink:
                slot_of_hop[nL] = len(out_links)
            out.append(
                _Junction(nid, in_links, out_links, has_source, has_sink,
                          pri, slot_of_hop)
            )
        return out

    # -- per-step machinery ---------------------------------------------------

    def _comp_at_count(self, curve: np.ndarray, comps: List[Optional[Composition]],
                       prev: Optional[np.ndarray], value: float, k: int
                       ) -> Optional[Composition]:
        idx = int(np.searchsorted(curve[: k + 1], value + self.count_tol,
                                  side="right")) - 1
        idx = min(idx, k - 1)
        if idx < 0:
            return None
        if comps[idx] is not None:
            return comps[idx]
        if prev is not None:
            j = prev[idx]
            return comps[j] if j >= 0 else None
        for j in range(idx - 1, -1, -1):
            if comps[j] is not None:
                return comps[j]
        return None

    def _link_exit_comp(self, li: int, k: int) -> Optional[Composition]:
        return self._comp_at_count(
            self.n_up[li], self.comp[li], self.prev_comp[li], self.n_dn[li, k], k
        )

    def _source_comp(self, oi: int, k: int) -> Optional[Composition]:
        o = self.origin_ids[oi]
        opaths = self.origin_paths[o]
        if self.queue[oi, k] > self.count_tol:
            # queue head: departure composition where the service count sits
            idx = int(np.searchsorted(
                self.cum_dep[oi, : k + 1],
                self.cum_srv[oi, k] + self.count_tol, side="right")) - 1
            idx = max(0, min(idx, k - 1))
            for j in range(idx, -1, -1):
                rates = self.h[opaths, j]
                tot = rates.sum()
                if tot > _FLOW_EPS:
                    nz = rates > 0
                    return opaths[nz], rates[nz] / tot
            return None
        rates = self.h[opaths, k]
        tot = rates.sum()
        if tot <= _FLOW_EPS:
            return None
        nz = rates > 0
        return opaths[nz], rates[nz] / tot

    def _effective_demand(self, li: int, k: int) -> float:
        link = self.links[li]
        t = self.times[k]
        d = link_demand(link, self._state_view(li), self.grid, t, self.count_tol)
        s = min(t + self.grid.dt_s - link.free_flow_time_s, t)
        avail = max(0.0, _interp(self.times, self.n_up[li], s) - self.n_dn[li, k])
        return min(d, avail / self.grid.dt_s)

    def _effective_supply(self, li: int, k: int) -> float:
        link = self.links[li]
        t = self.times[k]
        s_rate = link_supply(link, self._state_view(li), self.grid, t, self.count_tol)
        s = min(t + self.grid.dt_s - link.length_m / link.backward_speed_mps, t)
        n_dn_lag = _interp(self.times, self.n_dn[li], s) if s >= self.grid.t0_s else 0.0
        space = max(0.0, n_dn_lag + link.storage_veh - self.n_up[li, k])
        return min(s_rate, space / self.grid.dt_s)

    def _state_view(self, li: int) -> LinkState:
        return LinkState(self.links[li], self.n_up[li], self.n_dn[li],
                         self.inflow[li], self.outflow[li], self.comp[li])

    def run(self) -> DNLResult:
        grid = self.grid
        N = grid.n_steps
        dt = grid.dt_s
        nL = len(self.links)
        nP = len(self.path_ids)

        for k in range(N):
            D_eff = np.array([self._effective_demand(li, k) for li in range(nL)])
            S_eff = np.array([self._effective_supply(li, k) for li in range(nL)])
            q_k = self.queue[:, k]
            D_org = np.zeros(len(self.origin_ids))
            for oi, o in enumerate(self.origin_ids):
                d_raw = origin_demand(q_k[oi], self.dep_rate[oi, k], self.big_m[o])
                D_org[oi] = min(d_raw, q_k[oi] / dt + self.dep_rate[oi, k])

            inflow_k = np.zeros(nL)
            outflow_k = np.zeros(nL)
            served = np.zeros(len(self.origin_ids))
            sink_rate = 0.0
            new_comps: List[Tuple[int, Composition]] = []

            for J in self.junctions:
                m = len(J.in_links) + (1 if J.has_source else 0)
                n = len(J.out_links) + (1 if J.has_sink else 0)
                demands = np.zeros(m)
                comps: List[Optional[Composition]] = [None] * m
                for si, li in enumerate(J.in_links):
                    demands[si] = D_eff[li]
                    if demands[si] > _FLOW_EPS:
                        comps[si] = self._link_exit_comp(li, k)
                        if comps[si] is None:
                            raise DNLError(
                                f"link {self.link_ids[li]} demands flow at step {k} "
                                "but carries no labeled vehicles"
                            )
                if J.has_source:
                    oi = self.oidx[J.node_id]
                    demands[-1] = D_org[oi]
                    if demands[-1] > _FLOW_EPS:
                        comps[-1] = self._source_comp(oi, k)
                        if comps[-1] is None:
                            demands[-1] = 0.0
                supplies = np.empty(n)
                for sj, lj in enumerate(J.out_links):
                    supplies[sj] = S_eff[lj]
                if J.has_sink:
                    supplies[-1] = math.inf

                if demands.sum() <= _FLOW_EPS:
                    continue

                alpha = np.zeros((m, n))
                hops: List[Optional[np.ndarray]] = [None] * m
                for si in range(m):
                    if demands[si] <= _FLOW_EPS:
                        continue
                    ids, fr = comps[si]
                    if si < len(J.in_links):
                        hop = self.next_of[J.in_links[si]][ids]
                    else:
                        hop = self.first_link[J.node_id][ids]
                    hop = np.where(hop == SINK, nL, hop)
                    slots = J.slot_of_hop[hop]
                    if np.any(slots < 0):
                        bad = ids[slots < 0][0]
                        raise DNLError(
                            f"path {self.path_ids[bad]} has no movement at node "
                            f"{J.node_id}"
                        )
                    hops[si] = slots
                    alpha[si] = np.bincount(slots, weights=fr, minlength=n)

                io = JunctionIO(demands, supplies, J.priorities)
                f_out, f_in = self.model(io, DistributionMatrix(alpha))

                if abs(f_out.sum() - f_in.sum()) > 1e-9 * max(1.0, f_out.sum()):
                    raise DNLError(
                        f"junction {J.node_id} conservation residual "
                        f"{abs(f_out.sum() - f_in.sum()):.3e} at step {k}"
                    )

                for si, li in enumerate(J.in_links):
                    outflow_k[li] = f_out[si]
                if J.has_source:
                    served[self.oidx[J.node_id]] = f_out[-1]
                for sj, lj in enumerate(J.out_links):
                    inflow_k[lj] = f_in[sj]
                if J.has_sink:
                    sink_rate += f_in[-1]

                # entrance compositions of the outgoing links
                for sj, lj in enumerate(J.out_links):
                    if f_in[sj] <= _FLOW_EPS:
                        continue
                    contrib = []
                    for si in range(m):
                        if f_out[si] <= _FLOW_EPS or hops[si] is None:
                            continue
                        ids, fr = comps[si]
                        mask = hops[si] == sj
                        if not mask.any():
                            continue
                        contrib.append((f_out[si], (ids[mask], fr[mask])))
                    mixed = propagate_composition(contrib, f_in[sj])
                    if mixed is not None:
                        new_comps.append((lj, mixed))
                if J.has_source and f_out[-1] > _FLOW_EPS:
                    oi = self.oidx[J.node_id]
                    self.srv_comp[oi][k] = comps[-1]

            for lj, mixed in new_comps:
                self.comp[lj][k] = mixed
            for li in range(nL):
                if self.comp[li][k] is not None:
                    self.prev_comp[li, k] = k
                else:
                    self.prev_comp[li, k] = self.prev_comp[li, k - 1] if k > 0 else -1

            self.n_up[:, k + 1] = self.n_up[:, k] + dt * inflow_k
            self.n_dn[:, k + 1] = self.n_dn[:, k] + dt * outflow_k
            self.inflow[:, k] = inflow_k
            self.outflow[:, k] = outflow_k
            for oi in range(len(self.origin_ids)):
                self.queue[oi, k + 1] = step_origin_queue(
                    self.queue[oi, k], self.dep_rate[oi, k], served[oi], dt
                )
                self.cum_srv[oi, k + 1] = self.cum_srv[oi, k] + dt * served[oi]
            self.exited[k + 1] = self.exited[k] + dt * sink_rate

            departed = self.cum_dep[:, k + 1].sum()
            stored = (self.n_up[:, k + 1] - self.n_dn[:, k + 1]).sum()
            queued = self.queue[:, k + 1].sum()
            resid = abs(departed - (stored + queued + self.exited[k + 1]))
            self.balance[k + 1] = resid / max(1.0, departed)
            if self.balance[k + 1] > 1e-6:
                raise DNLError(
                    f"vehicle balance residual {self.balance[k + 1]:.3e} "
                    f"at step {k + 1}"
                )

        return self._extract_result()

    # -- travel-time extraction -------------------------------------------------

    def _origin_exit_times(self, oi: int, a: np.ndarray) -> np.ndarray:
        dep = self.cum_dep[oi]
        srv = self.cum_srv[oi]
        y = np.interp(a, self.times, dep)
        lam = _inverse_cum(self.times, srv, y - self.count_tol)
        return np.maximum(lam, a)

    def _link_exit_times(self, li: int, a: np.ndarray) -> np.ndarray:
        link = self.links[li]
        y = np.full(a.shape, np.nan)
        ok = ~np.isnan(a)
        y[ok] = np.interp(a[ok], self.times, self.n_up[li])
        lam = _inverse_cum(self.times, self.n_dn[li], y - self.count_tol)
        lam = np.maximum(lam, a + link.free_flow_time_s)
        lam[lam > self.grid.tf_s + 1e-9] = np.nan
        return lam

    def _extract_result(self) -> DNLResult:
        N = self.grid.n_steps
        nP = len(self.path_ids)
        dep_times = self.times[:N]
        tt = np.full((nP, N), np.nan)
        for p, pid in enumerate(self.path_ids):
            path = self.net.paths[pid]
            a = self._origin_exit_times(self.oidx[path.od[0]], dep_times.copy())
            for lid in path.links:
                a = self._link_exit_times(self.lidx[lid], a)
            tt[p] = a - dep_times
        truncated = np.isnan(tt)
        if truncated.any():
            n_bad = int(truncated.sum())
            rows = np.unique(np.where(truncated)[0])[:5]
            logger.warning(
                "%d path/departure cells not completed within the horizon "
                "(first affected paths: %s)",
                n_bad, [self.path_ids[r] for r in rows],
            )
        arrival = dep_times[None, :] + tt
        link_states = {
            lid: self._state_view(self.lidx[lid]) for lid in self.link_ids
        }
        origin_states = {
            o: OriginState(o, self.queue[oi], self.cum_dep[oi],
                           self.cum_srv[oi], self.srv_comp[oi])
            for o, oi in self.oidx.items()
        }
        return DNLResult(self.grid, self.path_ids, tt, arrival, link_states,
                         origin_states, self.balance, truncated)


def run_dnl(network: Network, departures: np.ndarray, grid: TimeGrid,
            junction_model: str = "fifo_priority",
            count_tol: float = COUNT_TOL) -> DNLResult:
    """Load the network with the given |P| x N departure-rate matrix.

    Rows of `departures` follow the iteration order of `network.paths`.
    """
    return _Loader(network, departures, grid, junction_model, count_tol).run()
