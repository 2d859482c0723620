"""Plain Adam with bias correction, operating on lists of numpy arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradient


@dataclass
class AdamState:
    """Moment buffers plus step counter for one parameter group."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState):
    """One Adam update over a list of arrays; returns (new_params, state).

    Moment buffers are allocated lazily on the first call and mutated in
    place; parameter arrays are replaced, never written through.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter/gradient/moment group sizes differ")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or inf")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    out = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        out.append(p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
    return out, state
