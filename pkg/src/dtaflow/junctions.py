"""Junction flow resolution from demands, supplies and split fractions.

The default model is a FIFO diverge combined with a priority merge: each
outgoing link's supply limits the oriented demand routed to it, the worst
movement throttles its whole incoming link (FIFO), and when a congested
merge has unequal incoming priorities the supply is rationed by priority
with redistribution of unused shares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

_EPS = 1e-12


class JunctionError(ValueError):
    """Raised when junction inputs are internally inconsistent."""


@dataclass(frozen=True)
class DistributionMatrix:
    """Split fractions alpha[i, j]: share of incoming link i's exit flow
    headed for outgoing link j. Rows of links without demand may be zero."""

    alpha: np.ndarray  # shape (m, n)

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        if a.ndim != 2:
            raise JunctionError("distribution matrix must be 2-D")
        if np.any(a < -_EPS) or np.any(a > 1 + 1e-9):
            raise JunctionError("split fractions must lie in [0, 1]")
        object.__setattr__(self, "alpha", a)

    def check_rows(self, demands: Sequence[float], tol: float = 1e-6) -> None:
        sums = self.alpha.sum(axis=1)
        for i, d in enumerate(demands):
            if d > _EPS and abs(sums[i] - 1.0) > tol:
                raise JunctionError(
                    f"distribution row {i} sums to {sums[i]:.9f} with positive demand"
                )


@dataclass(frozen=True)
class JunctionIO:
    demands: np.ndarray  # veh/s per incoming link (incl. virtual source)
    supplies: np.ndarray  # veh/s per outgoing link (incl. virtual sink)
    priorities: np.ndarray  # merge weights per incoming link, sum to 1

    def __post_init__(self):
        d = np.asarray(self.demands, dtype=float)
        s = np.asarray(self.supplies, dtype=float)
        p = np.asarray(self.priorities, dtype=float)
        if np.any(d < 0) or np.any(s < 0) or np.any(p < 0):
            raise JunctionError("junction demands/supplies/priorities must be >= 0")
        if abs(p.sum() - 1.0) > 1e-12:
            raise JunctionError(f"priorities sum to {p.sum()}, expected 1")
        object.__setattr__(self, "demands", d)
        object.__setattr__(self, "supplies", s)
        object.__setattr__(self, "priorities", p)


def _priority_allocate(
    total: float, demands: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Ration `total` among demanders proportionally to weights, redistributing
    unused shares until a fixed point (at most len(demands) rounds)."""
    m = len(demands)
    alloc = np.zeros(m)
    residual = demands.astype(float).copy()
    remaining = float(total)
    for _ in range(m):
        hungry = residual > _EPS
        if remaining <= _EPS or not hungry.any():
            break
        w = np.where(hungry, weights, 0.0)
        wsum = w.sum()
        if wsum <= _EPS:
            w = hungry.astype(float)
            wsum = w.sum()
        offer = remaining * w / wsum
        take = np.minimum(offer, residual)
        alloc += take
        residual -= take
        remaining -= take.sum()
        if np.all(offer - take <= _EPS):
            break  # every offer fully consumed: proportional split is final
    return alloc


def resolve_junction(
    io: JunctionIO, dist: DistributionMatrix
) -> Tuple[np.ndarray, np.ndarray]:
    """Resolve (outflows per incoming, inflows per outgoing).

    Guarantees: flow conservation (sum out == sum in), feasibility
    (f_out <= D, f_in <= S), and reduction to min(D, S) on a 1x1 node.
    """
    alpha = dist.alpha
    D = io.demands
    S = io.supplies
    m, n = alpha.shape
    if len(D) != m or len(S) != n:
        raise JunctionError("shape mismatch between demands/supplies and matrix")
    dist.check_rows(D)

    oriented = alpha.T @ D  # demand aimed at each outgoing link
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        beta = np.where(oriented > _EPS, np.minimum(1.0, S / oriented), 1.0)

    congested = beta < 1.0 - _EPS
    pri = io.priorities
    active = D > _EPS
    equal_pri = (
        not active.any()
        or np.ptp(pri[active]) <= 1e-12
    )

    if not congested.any() or equal_pri:
        gamma = np.ones(m)
        for i in range(m):
            used = alpha[i] > _EPS
            if used.any():
                gamma[i] = beta[used].min()
    else:
        gamma = np.ones(m)
        for _ in range(m):
            f_out = gamma * D
            f_in = alpha.T @ f_out
            violated = [j for j in range(n) if f_in[j] > S[j] * (1 + 1e-12) + _EPS]
            if not violated:
                break
            for j in violated:
                move = alpha[:, j] * D  # movement demand i -> j at full service
                alloc = _priority_allocate(S[j], move, pri)
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.where(move > _EPS, alloc / move, 1.0)
                gamma = np.minimum(gamma, ratio)

    f_out = gamma * D
    f_in = alpha.T @ f_out
    return f_out, f_in


# -- pluggable model registry -------------------------------------------------

JunctionModel = Callable[[JunctionIO, DistributionMatrix], Tuple[np.ndarray, np.ndarray]]

_MODELS: Dict[str, JunctionModel] = {"fifo_priority": resolve_junction}


def register_junction_model(name: str, model: JunctionModel) -> None:
    _MODELS[name] = model


def get_junction_model(name: str) -> JunctionModel:
    try:
        return _MODELS[name]
    except KeyError:
        raise JunctionError(
            f"unknown junction model {name!r}; available: {sorted(_MODELS)}"
        ) from None
