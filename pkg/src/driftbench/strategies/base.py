"""Hook contract shared by every incremental-learning strategy.

The training loop calls, in order: ``before_task`` once, then per batch
``augment_loss``, ``post_backward`` and ``after_step``, and ``after_task``
once at the end.  The base class is the None baseline: every hook is the
identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import Dataset
from ..model import Model, forward
from ..numerics import Tensor


@dataclass
class StepContext:
    model: Model
    x: np.ndarray
    y: np.ndarray
    logits: Tensor
    task_index: int


def pad_to(arr: np.ndarray, shape: tuple[int, ...], fill=0.0) -> np.ndarray:
    """Grow the last axis of ``arr`` to ``shape`` (the head-expansion pattern)."""
    from ..numerics import ShapeError

    if arr.shape == shape:
        return arr
    if arr.shape[:-1] != shape[:-1] or arr.shape[-1] > shape[-1]:
        raise ShapeError(f"cannot align stored shape {arr.shape} with parameter shape {shape}")
    out = np.empty(shape, dtype=arr.dtype)
    out[...] = fill if np.isscalar(fill) else 0.0
    out[..., : arr.shape[-1]] = arr
    if not np.isscalar(fill):
        out[..., arr.shape[-1]:] = fill[..., arr.shape[-1]:]
    return out


def predict_argmax(model: Model, windows: np.ndarray, batch_size: int = 512) -> np.ndarray:
    out = []
    for start in range(0, len(windows), batch_size):
        out.append(np.argmax(forward(model, windows[start:start + batch_size]).data, axis=1))
    return np.concatenate(out)


class Strategy:
    """None baseline; subclasses override the hooks they need."""

    name = "none"
    param_names: tuple[str, ...] = ()

    def before_task(self, task_index: int, train_data: Dataset, model: Model) -> Dataset:
        return train_data

    def augment_loss(self, base_loss: Tensor, ctx: StepContext) -> Tensor:
        return base_loss

    def post_backward(self, grads: list[np.ndarray], ctx: StepContext) -> list[np.ndarray]:
        return grads

    def after_step(self, grads: list[np.ndarray], deltas: list[np.ndarray]) -> None:
        pass

    def after_task(self, train_data: Dataset, model: Model) -> None:
        pass

    def predict(self, model: Model, windows: np.ndarray) -> np.ndarray:
        return predict_argmax(model, windows)

    def set_params(self, **params) -> None:
        unknown = set(params) - set(self.param_names)
        if unknown:
            raise ValueError(f"{self.name} has no parameters {sorted(unknown)}")
        for key, value in params.items():
            setattr(self, key, value)

    def params(self) -> dict:
        return {k: getattr(self, k) for k in self.param_names}

    def exemplar_bytes(self) -> int:
        return 0


class NoneStrategy(Strategy):
    pass
