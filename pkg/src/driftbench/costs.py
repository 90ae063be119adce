"""Storage accounting per method and the training-time versus IL-time split."""

from __future__ import annotations

from dataclasses import dataclass

BYTES_PER_PARAM = 4
MB = 1_000_000

# method -> (multiple of M, multiple of M*T, counts exemplar bytes)
_STORAGE = {
    "none": (1, 0, False),
    "ewc": (0, 2, False),
    "online_ewc": (2, 0, False),
    "si": (3, 0, False),
    "lwf": (1, 0, False),
    "icarl": (1, 0, True),
    "gem": (0, 1, True),
}


def storage_bytes(method: str, model_bytes: float, tasks: int, exemplar_bytes: float = 0) -> float:
    """Bytes a method must keep: weights, per-task anchors or importances, and stored samples.

    EWC keeps weights plus Fisher per task (2MT), Online EWC one running pair
    (2M), SI weights, anchor and importance (3M), LwF the model (M), iCaRL
    the model plus exemplars (M+B), GEM a copy per task plus memories (TM+B).
    """
    if method not in _STORAGE:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(_STORAGE)}")
    if model_bytes <= 0 or tasks < 1 or exemplar_bytes < 0:
        raise ValueError(f"need M > 0, T >= 1, B >= 0; got M={model_bytes}, T={tasks}, B={exemplar_bytes}")
    flat, per_task, with_b = _STORAGE[method]
    return flat * model_bytes + per_task * model_bytes * tasks + (exemplar_bytes if with_b else 0)


@dataclass
class LatencyProfile:
    train_time: list[float]
    il_time: list[float]

    def __post_init__(self):
        if len(self.train_time) != len(self.il_time):
            raise ValueError("train_time and il_time need one entry per task")
        if any(t < 0 for t in self.train_time + self.il_time):
            raise ValueError("timings must be non-negative")

    @property
    def total_train(self) -> float:
        return sum(self.train_time)

    @property
    def total_il(self) -> float:
        return sum(self.il_time)

    @property
    def total(self) -> float:
        return self.total_train + self.total_il

    def mean_train(self) -> float:
        return self.total_train / len(self.train_time)

    def mean_il(self) -> float:
        return self.total_il / len(self.il_time)


def profile(run) -> LatencyProfile:
    """Latency split from a report dict, a list of task results or a search point."""
    if isinstance(run, dict):
        tasks = run["timing"]["tasks"]
        return LatencyProfile([t["train_time"] for t in tasks], [t["il_time"] for t in tasks])
    tasks = getattr(run, "tasks", run)
    return LatencyProfile([t.train_time for t in tasks], [t.il_time for t in tasks])
