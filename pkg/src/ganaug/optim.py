"""Adam with bias correction."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import NonFiniteGradient, ShapeMismatch
from .tensor import Tensor


class AdamState:
    """Moment buffers and step counter for one parameter group."""

    def __init__(self, params: Sequence[Tensor], lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self)


def adam_step(params: Sequence[Tensor], grads, state: AdamState) -> None:
    """One Adam update of ``params`` in place.  Missing gradients count as zero."""
    if len(params) != len(state.m):
        raise ShapeMismatch(f"{len(params)} params but state tracks {len(state.m)}")
    grads = [np.zeros_like(p.data) if g is None else g for p, g in zip(params, grads)]
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter of shape {p.shape}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        dt = p.data.dtype
        m *= dt.type(b1)
        m += dt.type(1 - b1) * g
        v *= dt.type(b2)
        v += dt.type(1 - b2) * (g * g)
        if state.lr == 0:
            continue
        m_hat = m / dt.type(c1)
        v_hat = v / dt.type(c2)
        p.data -= (dt.type(state.lr) * m_hat / (np.sqrt(v_hat) + dt.type(state.eps))).astype(dt)
