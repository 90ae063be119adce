"""Knowledge-distillation strategies: LwF and iCaRL."""

from __future__ import annotations

import numpy as np

from ..data import Dataset, concat
from ..memory import ClassMeanSet, ExemplarStore, add_classes, compute_class_means, ncm_classify, _unit_rows
from ..model import Model, extract_features, forward
from ..numerics import ContractError, Tensor, ops
from .base import StepContext, Strategy

TEMPERATURE = 2.0


def distill_loss(student_logits: Tensor, teacher_logits, temperature: float = TEMPERATURE,
                 columns=None) -> Tensor:
    """Soft-target cross-entropy over ``columns``, scaled by ``temperature**2``.

    Both logit sets are divided by the temperature before the softmax; the
    teacher side is a constant.
    """
    t_data = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits)
    cols = np.arange(t_data.shape[1]) if columns is None else np.asarray(columns, dtype=np.int64)
    if cols.size == 0:
        raise ValueError("distillation needs at least one column")
    if cols.min() < 0 or cols.max() >= min(t_data.shape[1], student_logits.shape[1]):
        raise IndexError(f"distillation columns {cols.tolist()} out of range")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    t = t_data[:, cols].astype(np.float64) / temperature
    t -= t.max(axis=1, keepdims=True)
    p_teacher = np.exp(t)
    p_teacher /= p_teacher.sum(axis=1, keepdims=True)
    logq = ops.log_softmax(student_logits[:, cols] * (1.0 / temperature), axis=1)
    n_batch = student_logits.shape[0]
    return ops.sum(logq * p_teacher.astype(student_logits.dtype)) * (-(temperature ** 2) / n_batch)


def lwf_total_loss(new_task_loss: Tensor, distill: Tensor | None, task_index: int) -> Tensor:
    """``(1/j) * new + (1 - 1/j) * distill``; the first task has no distillation term."""
    if task_index < 1:
        raise ValueError(f"task_index is 1-based, got {task_index}")
    if task_index == 1:
        if distill is not None:
            raise ContractError("no distillation term exists on the first task")
        return new_task_loss
    if distill is None:
        raise ContractError(f"task {task_index} needs a distillation term")
    return new_task_loss * (1.0 / task_index) + distill * (1.0 - 1.0 / task_index)


def _teacher_logits(teacher: Model, x) -> np.ndarray:
    return forward(teacher, x).data


def icarl_task_loss(model: Model, x, y, class_weights, teacher: Model | None, task_index: int,
                    train_mode: bool = False, rng=None, temperature: float = TEMPERATURE) -> Tensor:
    """Weighted cross-entropy over every current column plus distillation on the teacher's columns."""
    logits = forward(model, x, train_mode, rng)
    base = ops.weighted_softmax_xent(logits, y, class_weights)
    if teacher is None:
        return lwf_total_loss(base, None, task_index)
    old = np.arange(teacher.n_classes)
    return lwf_total_loss(base, distill_loss(logits, _teacher_logits(teacher, x), temperature, old), task_index)


class LwF(Strategy):
    name = "lwf"

    def __init__(self, temperature: float = TEMPERATURE):
        self.temperature = temperature
        self.teacher: Model | None = None
        self.task_index = 0

    def before_task(self, task_index, train_data, model):
        self.task_index = task_index
        return train_data

    def augment_loss(self, base_loss, ctx: StepContext):
        if self.teacher is None:
            return base_loss
        old = np.arange(self.teacher.n_classes)
        d = distill_loss(ctx.logits, _teacher_logits(self.teacher, ctx.x), self.temperature, old)
        return lwf_total_loss(base_loss, d, ctx.task_index)

    def after_task(self, train_data, model):
        self.teacher = model.copy()


class ICaRL(LwF):
    """Exemplar rehearsal plus distillation; prediction by nearest class mean."""

    name = "icarl"

    def __init__(self, budget: int, policy: str = "herding", seed: int = 0, temperature: float = TEMPERATURE):
        super().__init__(temperature)
        self.store = ExemplarStore(budget, policy, seed)
        self.means: ClassMeanSet | None = None
        self._current: Dataset | None = None

    def before_task(self, task_index, train_data, model):
        super().before_task(task_index, train_data, model)
        self._current = train_data
        if self.store.n_samples() == 0:
            return train_data
        windows, labels = self.store.as_arrays()
        replay = Dataset(windows, labels, tuple(self.store.classes), train_data.split, "exemplars")
        return concat([train_data, replay])

    def after_task(self, train_data, model):
        super().after_task(train_data, model)
        add_classes(self.store, model, train_data.windows, train_data.labels)
        self.means = compute_class_means(self.store, model)
        self._current = None

    def _provisional_means(self, model: Model) -> ClassMeanSet:
        # mid-task scoring: old classes from exemplars, new ones from the task's own data
        rows, ids = [], []
        cur = self._current
        for c in range(model.n_classes):
            if c in self.store.exemplars:
                windows = self.store.exemplars[c]
            elif cur is not None and np.any(cur.labels == c):
                windows = cur.windows[cur.labels == c]
            else:
                continue
            feats = _unit_rows(extract_features(model, windows).data)
            rows.append(_unit_rows(feats.mean(axis=0)))
            ids.append(c)
        return ClassMeanSet(tuple(ids), np.stack(rows))

    def predict(self, model, windows):
        means = self.means
        if means is None or self._current is not None:
            means = self._provisional_means(model)
        return ncm_classify(extract_features(model, windows).data, means)

    def exemplar_bytes(self) -> int:
        return self.store.byte_size()
