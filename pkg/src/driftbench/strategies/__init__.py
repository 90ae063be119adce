"""Incremental-learning strategies behind one hook contract."""

from .base import NoneStrategy, StepContext, Strategy, pad_to, predict_argmax
from .distill import TEMPERATURE, ICaRL, LwF, distill_loss, icarl_task_loss, lwf_total_loss
from .gem import GEM, GemProjectionError, gem_project, gem_reference_grads, solve_dual
from .regularization import (EWC, FISHER_CAP, SI, SI_DAMP, OnlineEWC, SiState, ewc_penalty, fisher_estimate,
                             online_ewc_merge, si_accumulate, si_consolidate, si_penalty)

STRATEGIES = ("none", "ewc", "online_ewc", "si", "lwf", "icarl", "gem")
IL_PARAMS = {"ewc": ("lam",), "online_ewc": ("lam", "gamma"), "si": ("c",)}


def make_strategy(kind: str, *, seed: int = 0, budget: int = 0, **params) -> Strategy:
    """Build a fresh strategy; ``budget`` is the exemplar/memory sample count."""
    if kind == "none":
        return NoneStrategy()
    if kind == "ewc":
        return EWC(params.get("lam", 1.0), params.get("fisher_cap", FISHER_CAP), seed)
    if kind == "online_ewc":
        return OnlineEWC(params.get("lam", 1.0), params.get("gamma", 1.0), params.get("fisher_cap", FISHER_CAP), seed)
    if kind == "si":
        return SI(params.get("c", 0.2), params.get("damp", SI_DAMP))
    if kind == "lwf":
        return LwF(params.get("temperature", TEMPERATURE))
    if kind == "icarl":
        return ICaRL(budget, params.get("policy", "herding"), seed, params.get("temperature", TEMPERATURE))
    if kind == "gem":
        return GEM(budget, seed)
    raise ValueError(f"unknown strategy {kind!r}; choose from {STRATEGIES}")


__all__ = [
    "EWC", "FISHER_CAP", "GEM", "ICaRL", "IL_PARAMS", "LwF", "NoneStrategy", "OnlineEWC", "SI", "SI_DAMP",
    "STRATEGIES", "SiState", "StepContext", "Strategy", "TEMPERATURE", "GemProjectionError", "distill_loss",
    "ewc_penalty", "fisher_estimate", "gem_project", "gem_reference_grads", "icarl_task_loss",
    "lwf_total_loss", "make_strategy", "online_ewc_merge", "pad_to", "predict_argmax", "si_accumulate",
    "si_consolidate", "si_penalty", "solve_dual",
]
