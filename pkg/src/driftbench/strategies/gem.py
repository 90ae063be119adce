"""Gradient Episodic Memory: per-task random memories and dual-QP gradient projection."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..data import Dataset, class_weights
from ..model import Model, forward
from ..numerics import Tape, ops
from .base import StepContext, Strategy

DUAL_TOL = 1e-8
DUAL_MAX_ITER = 10_000
LABEL_BYTES = 2


class GemProjectionError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def default_memory_loss(logits, labels):
    return ops.weighted_softmax_xent(logits, labels, class_weights(labels, logits.shape[1]))


def gem_reference_grads(model: Model, memories: list[tuple[np.ndarray, np.ndarray]],
                        loss_fn: Callable = default_memory_loss) -> list[np.ndarray]:
    """One flattened float64 gradient per stored task, in task order, dropout off."""
    if not memories:
        raise ValueError("gem_reference_grads needs at least one completed task")
    params = model.parameters()
    refs = []
    for k, (x, y) in enumerate(memories):
        if len(x) == 0:
            raise ValueError(f"memory for task {k + 1} is empty")
        with Tape() as tape:
            loss = loss_fn(forward(model, x), y)
        refs.append(np.concatenate([g.reshape(-1).astype(np.float64) for g in tape.gradient(loss, params)]))
    return refs


def _kkt_residual(v: np.ndarray, q: np.ndarray, p: np.ndarray) -> float:
    grad = q @ v + p
    return float(np.max(np.abs(v - np.maximum(v - grad, 0.0))))


def _polish(v: np.ndarray, q: np.ndarray, p: np.ndarray, scale: float) -> np.ndarray | None:
    """Solve the equality system on the support of ``v``; keep it if it satisfies KKT."""
    active = v > 1e-12 * max(1.0, float(v.max(initial=0.0)))
    out = np.zeros_like(v)
    if active.any():
        sol, *_ = np.linalg.lstsq(q[np.ix_(active, active)], -p[active], rcond=None)
        if np.any(sol < 0):
            return None
        out[active] = sol
    grad = q @ out + p
    if np.all(grad[~active] >= -1e-10 * scale):
        return out
    return None


def solve_dual(q: np.ndarray, p: np.ndarray, tol: float = DUAL_TOL, max_iter: int = DUAL_MAX_ITER) -> np.ndarray:
    """Minimise ``0.5 v'Qv + p'v`` over ``v >= 0`` by accelerated projected gradient."""
    scale = max(1.0, float(np.max(np.abs(p))))
    lip = float(np.linalg.eigvalsh(q).max())
    if lip <= 0:
        raise GemProjectionError("reference gradients are all zero", float(np.max(np.abs(p))))
    v = np.zeros_like(p)
    y = v.copy()
    t = 1.0
    residual = _kkt_residual(v, q, p)
    for _ in range(max_iter):
        v_next = np.maximum(y - (q @ y + p) / lip, 0.0)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        # restart momentum when the objective goes up
        if (0.5 * v_next @ q @ v_next + p @ v_next) > (0.5 * v @ q @ v + p @ v):
            t_next, y = 1.0, v_next.copy()
        else:
            y = v_next + ((t - 1.0) / t_next) * (v_next - v)
        v, t = v_next, t_next
        residual = _kkt_residual(v, q, p)
        if residual <= tol * scale:
            break
    polished = _polish(v, q, p, scale)
    if polished is not None:
        return polished
    if residual <= tol * scale:
        return v
    raise GemProjectionError(f"dual solver did not converge in {max_iter} iterations", residual)


def gem_project(g: np.ndarray, refs, tol: float = DUAL_TOL, max_iter: int = DUAL_MAX_ITER) -> np.ndarray:
    """Closest vector to ``g`` (Euclidean) whose inner product with every reference is >= 0.

    Returns ``g`` itself when no constraint is violated.
    """
    g = np.asarray(g)
    mat = np.atleast_2d(np.asarray(refs, dtype=np.float64))
    if mat.shape[1] != g.shape[0]:
        raise ValueError(f"reference length {mat.shape[1]} does not match gradient length {g.shape[0]}")
    g64 = g.astype(np.float64)
    dots = mat @ g64
    if np.all(dots >= 0):
        return g
    v = solve_dual(mat @ mat.T, dots, tol, max_iter)
    return (g64 + mat.T @ v).astype(g.dtype)


class GEM(Strategy):
    name = "gem"

    def __init__(self, budget: int, seed: int = 0):
        if budget < 1:
            raise ValueError(f"GEM budget must be >= 1 sample, got {budget}")
        self.budget = budget
        self.seed = seed
        self.memories: list[tuple[np.ndarray, np.ndarray]] = []

    def post_backward(self, grads, ctx: StepContext):
        if not self.memories:
            return grads
        refs = gem_reference_grads(ctx.model, self.memories)
        flat = np.concatenate([g.reshape(-1) for g in grads])
        projected = gem_project(flat, refs)
        if projected is flat:
            return grads
        out, offset = [], 0
        for g in grads:
            out.append(projected[offset:offset + g.size].reshape(g.shape).astype(g.dtype))
            offset += g.size
        return out

    def after_task(self, train_data: Dataset, model):
        k = len(self.memories) + 1
        size = max(min(self.budget // k, len(train_data)), 1)
        rng = np.random.default_rng([self.seed, 2000 + k])
        idx = np.sort(rng.permutation(len(train_data))[:size])
        self.memories.append((train_data.windows[idx], train_data.labels[idx]))

    def exemplar_bytes(self) -> int:
        return sum(len(x) * (x[0].size * 4 + LABEL_BYTES) for x, _ in self.memories)
