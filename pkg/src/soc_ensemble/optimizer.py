"""Adam updates and learning-rate grid search."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nn_core import GradientSet, NetworkParams

log = logging.getLogger(__name__)

DEFAULT_LR_GRID = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)


@dataclass
class AdamState:
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def fresh(cls, params: NetworkParams, lr: float = 0.1, **kw) -> AdamState:
        arrays = params.arrays()
        return cls(lr=lr, m=[np.zeros_like(a) for a in arrays],
                   v=[np.zeros_like(a) for a in arrays], **kw)


@dataclass(frozen=True)
class LrGrid:
    values: tuple[float, ...] = DEFAULT_LR_GRID

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise ValueError("optimizer: empty learning-rate grid")
        if any(v <= 0 for v in vals):
            raise ValueError("optimizer: learning rates must be positive")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValueError("optimizer: grid must be strictly decreasing")


def adam_step(state: AdamState, params: NetworkParams,
              grads: GradientSet) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise ValueError("optimizer: gradient shapes do not match parameters")
    if not state.m:
        state = AdamState.fresh(params, lr=state.lr, beta1=state.beta1,
                                beta2=state.beta2, eps=state.eps)
    for g in g_arrays:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("optimizer: non-finite gradient")

    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
        new_m.append(m)
        new_v.append(v)

    out = NetworkParams(params.spec, new_p[0::2], new_p[1::2], params.seed)
    return out, AdamState(state.lr, b1, b2, state.eps, t, new_m, new_v)


def lr_grid_search(grid: LrGrid, train_fn: Callable[[float], float],
                   lower_is_better: bool = True) -> tuple[float, dict[float, float]]:
    """Score every grid value and return (best lr, all scores).

    Non-finite scores (or a candidate raising FloatingPointError) disqualify
    that lr. Ties go to the larger learning rate.
    """
    scores: dict[float, float] = {}
    for lr in grid.values:
        try:
            s = float(train_fn(lr))
        except FloatingPointError as exc:
            log.warning("lr %g disqualified: %s", lr, exc)
            s = math.nan
        scores[lr] = s
    valid = [(lr, s) for lr, s in scores.items() if math.isfinite(s)]
    if not valid:
        raise RuntimeError("optimizer: every learning rate in the grid was disqualified")
    sign = 1.0 if lower_is_better else -1.0
    # grid is descending, so the first minimum is the largest lr among ties
    best = min(valid, key=lambda item: sign * item[1])[1]
    chosen = next(lr for lr, s in valid if s == best)
    return chosen, scores
