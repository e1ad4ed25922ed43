from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numba
import numpy as np

from .autodiff import Parameter


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


# Moments of parameters whose gradient stays zero (dead ReLU units) decay
# geometrically and reach the subnormal range after ~7000 steps, where float
# arithmetic is roughly ten times slower. Below this magnitude they are flushed
# to zero; their contribution to an update is far below float64 resolution.
FLUSH = 1e-150


@numba.njit(cache=True)
def _adam_kernel(p, g, m, v, beta1, beta2, step_size, bc2, eps, flush):
    # single pass over flat arrays; same operation order as the textbook numpy form
    for i in range(p.size):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * (gi * gi)
        if abs(mi) < flush:
            mi = 0.0
        if vi < flush:
            vi = 0.0
        m[i] = mi
        v[i] = vi
        p[i] -= (mi / (np.sqrt(vi / bc2) + eps)) * step_size


def adam_step(params: Mapping[str, Parameter], grads: Mapping[str, np.ndarray], state: AdamState) -> Mapping[str, Parameter]:
    """One bias-corrected Adam update, in place. Parameters without a gradient are left alone."""
    for name, g in grads.items():
        if g.shape != params[name].value.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {params[name].value.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    step_size = state.lr / bc1
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        if not p.value.flags.c_contiguous:
            p.value = np.ascontiguousarray(p.value)
        _adam_kernel(p.value.reshape(-1), np.ascontiguousarray(g).reshape(-1),
                     state.m[name].reshape(-1), state.v[name].reshape(-1),
                     state.beta1, state.beta2, step_size, bc2, state.eps, FLUSH)
    return params
