"""Adam optimizer operating in place on parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def fresh(cls, params: Sequence[Tensor], lr: float = 1e-3) -> "AdamState":
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        return cls(lr=lr, m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params])


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """Apply one bias-corrected Adam update in place.

    Returns the per-parameter displacement ``theta_new - theta_old`` as
    actually stored, which is what path-integral importance needs.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(f"adam_step got {len(params)} params, {len(grads)} grads, {len(state.m)} moments")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"adam_step shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    deltas = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = g.astype(p.dtype, copy=False)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        old = p.data
        p.data = (old - step).astype(p.dtype, copy=False)
        deltas.append(p.data - old)
    return deltas
