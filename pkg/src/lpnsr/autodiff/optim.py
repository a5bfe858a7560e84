"""AdamW with decoupled weight decay."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .tensor import DTYPE


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Apply one AdamW update in place and return ``(params, state)``.

    ``params`` maps names to tensors; ``grads`` maps the same names to arrays.
    Parameters with no entry in ``grads`` are treated as having zero gradient.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape, dtype=DTYPE)
        elif g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient for {name!r} has shape {g.shape}, expected {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape, dtype=DTYPE)
            state.v[name] = np.zeros(p.shape, dtype=DTYPE)
        v = state.v[name]
        m *= DTYPE(state.beta1)
        m += DTYPE(1.0 - state.beta1) * g
        v *= DTYPE(state.beta2)
        v += DTYPE(1.0 - state.beta2) * g * g
        update = (m / DTYPE(c1)) / (np.sqrt(v / DTYPE(c2)) + DTYPE(state.eps))
        data = p.data
        if state.weight_decay:
            data = data * DTYPE(1.0 - state.lr * state.weight_decay)
        p.data = (data - DTYPE(state.lr) * update).astype(DTYPE)
    return params, state
