"""Parameter-regularisation strategies: EWC, Online EWC and Synaptic Intelligence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import Dataset
from ..model import Model, forward
from ..numerics import ShapeError, Tape, Tensor, ops
from .base import StepContext, Strategy, pad_to

FISHER_CAP = 1024
SI_DAMP = 0.1

Snapshot = dict[str, np.ndarray]


def _sum_terms(terms: list[Tensor], like: Tensor) -> Tensor:
    if not terms:
        return Tensor(0.0, dtype=like.dtype)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def ewc_penalty(params: list[Tensor], anchors: list[tuple[Snapshot, Snapshot]], lam: float) -> Tensor:
    """``lam/2 * sum_j sum_p F_j[p] (theta[p] - theta*_j[p])**2``.

    Anchors recorded before a head expansion are zero-padded on the new
    columns, so those columns carry no penalty.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    terms = []
    if lam > 0:
        for center, fisher in anchors:
            for p in params:
                c = pad_to(np.asarray(center[p.name], dtype=np.float64), p.shape)
                f = pad_to(np.asarray(fisher[p.name], dtype=np.float64), p.shape)
                terms.append(ops.quadratic_penalty(p, c, f))
    return _sum_terms(terms, params[0]) * (lam / 2.0)


def fisher_estimate(model: Model, data: Dataset, cap: int = FISHER_CAP, seed: int = 0) -> Snapshot:
    """Empirical diagonal Fisher: mean squared per-sample gradient of ``-log p(y|x)``.

    Uses every sample when ``len(data) <= cap``, otherwise a seeded subset
    of ``cap`` samples.  Dropout is off.
    """
    n = len(data)
    if n == 0:
        raise ValueError("fisher_estimate needs non-empty data")
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    idx = np.arange(n) if n <= cap else np.sort(np.random.default_rng(seed).permutation(n)[:cap])
    params = model.parameters()
    acc = [np.zeros(p.shape) for p in params]
    ones = np.ones(model.n_classes)
    for i in idx:
        with Tape() as tape:
            logits = forward(model, data.windows[i:i + 1])
            loss = ops.weighted_softmax_xent(logits, data.labels[i:i + 1], ones)
        for a, g in zip(acc, tape.gradient(loss, params)):
            a += np.square(g, dtype=np.float64)
    return {p.name: a / len(idx) for p, a in zip(params, acc)}


def online_ewc_merge(f_run: np.ndarray, f_new: np.ndarray, gamma: float) -> np.ndarray:
    """``gamma * f_run + f_new`` elementwise."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    f_run = np.asarray(f_run)
    f_new = np.asarray(f_new)
    if f_run.shape != f_new.shape:
        raise ShapeError(f"Fisher shapes differ: {f_run.shape} vs {f_new.shape}")
    return gamma * f_run + f_new


class EWC(Strategy):
    name = "ewc"
    param_names = ("lam", "fisher_cap")

    def __init__(self, lam: float = 1.0, fisher_cap: int = FISHER_CAP, seed: int = 0):
        self.lam = lam
        self.fisher_cap = fisher_cap
        self.seed = seed
        self.anchors: list[tuple[Snapshot, Snapshot]] = []
        self._task = 0

    def before_task(self, task_index, train_data, model):
        self._task = task_index
        return train_data

    def augment_loss(self, base_loss, ctx: StepContext):
        if self.lam == 0 or not self.anchors:
            return base_loss
        return base_loss + ewc_penalty(ctx.model.parameters(), self.anchors, self.lam)

    def after_task(self, train_data, model):
        fisher = fisher_estimate(model, train_data, self.fisher_cap, seed=self.seed * 1000 + self._task)
        self.anchors.append((model.snapshot(), fisher))


class OnlineEWC(EWC):
    """Single anchor: the latest weights and a gamma-decayed running Fisher sum."""

    name = "online_ewc"
    param_names = ("lam", "gamma", "fisher_cap")

    def __init__(self, lam: float = 1.0, gamma: float = 1.0, fisher_cap: int = FISHER_CAP, seed: int = 0):
        super().__init__(lam, fisher_cap, seed)
        if not 0.0 < gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {gamma}")
        self.gamma = gamma
        self.f_run: Snapshot | None = None
        self.center: Snapshot | None = None

    def augment_loss(self, base_loss, ctx: StepContext):
        if self.lam == 0 or self.f_run is None:
            return base_loss
        return base_loss + ewc_penalty(ctx.model.parameters(), [(self.center, self.f_run)], self.lam)

    def after_task(self, train_data, model):
        fisher = fisher_estimate(model, train_data, self.fisher_cap, seed=self.seed * 1000 + self._task)
        if self.f_run is None:
            self.f_run = fisher
        else:
            self.f_run = {k: online_ewc_merge(pad_to(self.f_run[k], v.shape), v, self.gamma)
                          for k, v in fisher.items()}
        self.center = model.snapshot()


@dataclass
class SiState:
    """Path integral ``w``, importance ``omega`` and the last task-end weights, keyed by name."""

    w: Snapshot = field(default_factory=dict)
    omega: Snapshot = field(default_factory=dict)
    theta_prev: Snapshot = field(default_factory=dict)
    damp: float = SI_DAMP


def si_accumulate(state: SiState, names: list[str], grads: list[np.ndarray], deltas: list[np.ndarray]) -> None:
    """``w += -grad * delta`` for one optimizer step (pre-step gradient)."""
    for name, g, d in zip(names, grads, deltas):
        state.w[name] -= np.asarray(g, dtype=np.float64) * d


def si_consolidate(state: SiState, theta_end: Snapshot) -> None:
    """Fold the task's path integral into ``omega`` and restart accumulation."""
    for name, end in theta_end.items():
        end = np.asarray(end, dtype=np.float64)
        moved = end - state.theta_prev[name]
        gain = np.maximum(state.w[name], 0.0) / (moved * moved + state.damp)
        prev = pad_to(state.omega[name], end.shape) if name in state.omega else np.zeros(end.shape)
        state.omega[name] = prev + gain
        state.w[name] = np.zeros_like(end)
        state.theta_prev[name] = end.copy()


def si_penalty(params: list[Tensor], state: SiState, c: float) -> Tensor:
    """``c * sum_p omega[p] * (theta*[p] - theta[p])**2`` with theta* the last task-end weights."""
    terms = []
    for p in params:
        if p.name not in state.omega:
            continue
        omega = pad_to(state.omega[p.name], p.shape)
        center = pad_to(state.theta_prev[p.name], p.shape)
        terms.append(ops.quadratic_penalty(p, center, omega))
    return _sum_terms(terms, params[0]) * c


class SI(Strategy):
    name = "si"
    param_names = ("c", "damp")

    def __init__(self, c: float = 0.2, damp: float = SI_DAMP):
        self.c = c
        self.damp = damp
        self.state = SiState(damp=damp)
        self._names: list[str] = []

    def set_params(self, **params):
        super().set_params(**params)
        self.state.damp = self.damp

    def before_task(self, task_index, train_data, model):
        self._names = [p.name for p in model.parameters()]
        for p in model.parameters():
            cur = p.data.astype(np.float64)
            self.state.w[p.name] = np.zeros(p.shape)
            # columns added since the last task start from their current init
            prev = self.state.theta_prev.get(p.name)
            self.state.theta_prev[p.name] = cur.copy() if prev is None else pad_to(prev, p.shape, fill=cur)
            if p.name in self.state.omega:
                self.state.omega[p.name] = pad_to(self.state.omega[p.name], p.shape)
        return train_data

    def augment_loss(self, base_loss, ctx: StepContext):
        if self.c == 0 or not self.state.omega:
            return base_loss
        return base_loss + si_penalty(ctx.model.parameters(), self.state, self.c)

    def after_step(self, grads, deltas):
        si_accumulate(self.state, self._names, grads, deltas)

    def after_task(self, train_data, model):
        si_consolidate(self.state, model.snapshot())
