"""Windowed datasets, class-incremental task splits and a synthetic generator."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DATASET_MAGIC = b"DBDS"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")
STD_FLOOR = 1e-8


class FormatError(ValueError):
    """A binary file does not match its declared layout."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True, eq=False)
class Dataset:
    windows: np.ndarray  # [N, T, D] float32
    labels: np.ndarray  # [N] int64, global class ids
    classes: tuple[int, ...]
    split: str = "train"
    provenance: str = ""

    def __post_init__(self):
        windows = np.ascontiguousarray(self.windows, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if windows.ndim != 3:
            raise ValueError(f"windows must be [N, T, D], got shape {windows.shape}")
        if len(windows) == 0:
            raise ValueError("dataset must hold at least one window")
        if labels.shape != (len(windows),):
            raise ValueError(f"labels shape {labels.shape} does not match {len(windows)} windows")
        classes = tuple(sorted(int(c) for c in self.classes))
        if not set(np.unique(labels).tolist()) <= set(classes):
            raise ValueError("labels contain ids outside the class list")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        object.__setattr__(self, "windows", windows)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "classes", classes)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_steps(self) -> int:
        return self.windows.shape[1]

    @property
    def n_features(self) -> int:
        return self.windows.shape[2]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, windows=self.windows[idx], labels=self.labels[idx])

    def relabel(self, mapping: dict[int, int]) -> "Dataset":
        labels = np.array([mapping[int(c)] for c in self.labels], dtype=np.int64)
        classes = tuple(mapping[c] for c in self.classes if c in mapping)
        return replace(self, labels=labels, classes=classes)


def concat(datasets: Sequence[Dataset]) -> Dataset:
    first = datasets[0]
    return Dataset(
        windows=np.concatenate([d.windows for d in datasets]),
        labels=np.concatenate([d.labels for d in datasets]),
        classes=tuple(sorted(set().union(*(d.classes for d in datasets)))),
        split=first.split,
        provenance=first.provenance,
    )


@dataclass(frozen=True)
class TaskSplit:
    """Ordered, pairwise-disjoint class groups; one group per task."""

    tasks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for group in self.tasks:
            if not group:
                raise ValueError("every task needs at least one class")
            if seen & set(group):
                raise ValueError(f"task classes overlap: {self.tasks}")
            seen |= set(group)

    def __len__(self) -> int:
        return len(self.tasks)

    @property
    def arrival_order(self) -> tuple[int, ...]:
        return tuple(c for group in self.tasks for c in group)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def normalize(train: Dataset, test: Dataset) -> tuple[Dataset, Dataset, NormStats]:
    """Zero-mean unit-variance per feature dimension, statistics from train only."""
    flat = train.windows.reshape(-1, train.n_features).astype(np.float64)
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), STD_FLOOR)

    def apply(ds: Dataset) -> Dataset:
        return replace(ds, windows=((ds.windows - mean) / std).astype(np.float32))

    return apply(train), apply(test), NormStats(mean=mean, std=std)


def make_scenario(classes: Iterable[int], scenario: int, variation_seed: int) -> TaskSplit:
    """Build the class-incremental task split for scenario 1, 2 or 3.

    1: all classes but one, then the held-out class (seed picks which).
    2: floor(N/2) shuffled classes, then the rest.
    3: floor(N/2) shuffled classes, then one class per task.
    """
    pool = sorted(int(c) for c in classes)
    n = len(pool)
    if scenario not in (1, 2, 3):
        raise ValueError(f"scenario must be 1, 2 or 3, got {scenario}")
    if n < (4 if scenario == 3 else 2):
        raise ValueError(f"scenario {scenario} needs more classes, got {n}")
    if scenario == 1:
        held = pool[variation_seed % n]
        return TaskSplit((tuple(c for c in pool if c != held), (held,)))
    perm = [int(c) for c in np.random.default_rng(variation_seed).permutation(pool)]
    half = n // 2
    if scenario == 2:
        return TaskSplit((tuple(sorted(perm[:half])), tuple(sorted(perm[half:]))))
    return TaskSplit((tuple(sorted(perm[:half])),) + tuple((c,) for c in perm[half:]))


def filter_by_classes(dataset: Dataset, class_set: Iterable[int]) -> Dataset:
    wanted = sorted(set(int(c) for c in class_set))
    if not wanted:
        raise ValueError("class set must be nonempty")
    mask = np.isin(dataset.labels, wanted)
    if not mask.any():
        raise ValueError(f"no windows with classes {wanted}")
    return replace(dataset, windows=dataset.windows[mask], labels=dataset.labels[mask],
                   classes=tuple(c for c in dataset.classes if c in wanted) or tuple(wanted))


def class_weights(labels, n_classes: int) -> np.ndarray:
    """Inverse-frequency weights with mean sample weight 1; absent classes get 0."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=n_classes)[:n_classes].astype(np.float64)
    present = counts > 0
    weights = np.zeros(n_classes, dtype=np.float64)
    weights[present] = len(labels) / (present.sum() * counts[present])
    return weights


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 6
    n_steps: int = 16
    n_features: int = 6
    n_train: int = 600
    n_test: int = 200
    separation: float = 3.0
    ar_coef: float = 0.5
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if min(self.n_steps, self.n_features) < 1:
            raise ValueError("n_steps and n_features must be positive")
        if self.n_train < self.n_classes or self.n_test < self.n_classes:
            raise ValueError("need at least one train and one test window per class")
        if self.separation < 0 or self.noise < 0:
            raise ValueError("separation and noise must be non-negative")
        if not 0.0 < self.ar_coef < 1.0:
            raise ValueError(f"ar_coef must be in (0, 1), got {self.ar_coef}")


def _per_class(total: int, n_classes: int) -> list[int]:
    return [total // n_classes + (c < total % n_classes) for c in range(n_classes)]


def _ar_windows(spec: SynthSpec, offsets: np.ndarray, counts: list[int], rng) -> tuple[np.ndarray, np.ndarray]:
    labels = np.repeat(np.arange(spec.n_classes), counts)
    n = len(labels)
    rho = spec.ar_coef
    mu = offsets[labels]
    x = np.empty((n, spec.n_steps, spec.n_features))
    # start from the stationary distribution of the per-class process
    prev = mu / (1.0 - rho) + spec.noise * rng.standard_normal((n, spec.n_features)) / np.sqrt(1.0 - rho * rho)
    for t in range(spec.n_steps):
        prev = rho * prev + spec.noise * rng.standard_normal((n, spec.n_features)) + mu
        x[:, t] = prev
    order = rng.permutation(n)
    return x[order].astype(np.float32), labels[order]


def synth_generate(spec: SynthSpec) -> tuple[Dataset, Dataset]:
    """AR(1) windows ``x_t = rho x_{t-1} + eta_t + mu_c``; train and test use disjoint streams."""
    base = np.random.default_rng([spec.seed, 0])
    directions = base.standard_normal((spec.n_classes, spec.n_features))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    offsets = spec.separation * directions
    classes = tuple(range(spec.n_classes))
    tag = f"synth:{spec}"
    xtr, ytr = _ar_windows(spec, offsets, _per_class(spec.n_train, spec.n_classes),
                           np.random.default_rng([spec.seed, 1]))
    xte, yte = _ar_windows(spec, offsets, _per_class(spec.n_test, spec.n_classes),
                           np.random.default_rng([spec.seed, 2]))
    return (Dataset(xtr, ytr, classes, "train", tag), Dataset(xte, yte, classes, "test", tag))


def save_dataset(dataset: Dataset, path) -> None:
    """Write DBDS: magic, version, N, T, D, C (u32 LE), f32 LE windows, u16 LE labels."""
    n, t, d = dataset.windows.shape
    c = max(dataset.classes) + 1
    if c > 0xFFFF:
        raise ValueError("class ids must fit in u16")
    blob = (_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, t, d, c)
            + dataset.windows.astype("<f4").tobytes()
            + dataset.labels.astype("<u2").tobytes())
    Path(path).write_bytes(blob)


def load_dataset(path, split: str | None = None) -> Dataset:
    blob = Path(path).read_bytes()
    if blob[:4] != DATASET_MAGIC:
        raise FormatError("bad dataset magic", 0)
    if len(blob) < _HEADER.size:
        raise FormatError("truncated dataset header", len(blob))
    _, version, n, t, d, c = _HEADER.unpack_from(blob, 0)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    payload = n * t * d * 4
    expected = _HEADER.size + payload + 2 * n
    if len(blob) < _HEADER.size + payload:
        raise FormatError(f"window payload truncated: need {payload} bytes", len(blob))
    if len(blob) < expected:
        raise FormatError(f"label payload truncated: need {2 * n} bytes", len(blob))
    if len(blob) > expected:
        raise FormatError("trailing bytes after labels", expected)
    windows = np.frombuffer(blob, dtype="<f4", count=n * t * d, offset=_HEADER.size).reshape(n, t, d)
    labels = np.frombuffer(blob, dtype="<u2", count=n, offset=_HEADER.size + payload)
    if split is None:
        split = "test" if "test" in Path(path).name else "train"
    return Dataset(windows.astype(np.float32), labels.astype(np.int64), tuple(range(c)), split, str(path))


def load_csv(path, n_steps: int, n_features: int, split: str = "train") -> Dataset:
    """Import one window per row: ``T*D`` values (time-major) then the integer label."""
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    if rows.shape[1] != n_steps * n_features + 1:
        raise ValueError(f"expected {n_steps * n_features + 1} columns, got {rows.shape[1]}")
    labels = rows[:, -1].astype(np.int64)
    windows = rows[:, :-1].reshape(len(rows), n_steps, n_features)
    return Dataset(windows, labels, tuple(range(int(labels.max()) + 1)), split, str(path))


@dataclass
class ScenarioData:
    """Per-task train/test datasets with labels remapped to head columns."""

    split: TaskSplit
    train: list[Dataset] = field(default_factory=list)
    test: list[Dataset] = field(default_factory=list)

    @property
    def n_tasks(self) -> int:
        return len(self.split)

    def task_columns(self, j: int) -> tuple[int, ...]:
        start = sum(len(g) for g in self.split.tasks[:j])
        return tuple(range(start, start + len(self.split.tasks[j])))

    def classes_through(self, j: int) -> int:
        return sum(len(g) for g in self.split.tasks[: j + 1])


def build_scenario(train: Dataset, test: Dataset, split: TaskSplit) -> ScenarioData:
    """Slice both splits per task and remap global ids to arrival-order columns."""
    mapping = {c: i for i, c in enumerate(split.arrival_order)}
    out = ScenarioData(split=split)
    for group in split.tasks:
        out.train.append(filter_by_classes(train, group).relabel(mapping))
        out.test.append(filter_by_classes(test, group).relabel(mapping))
    return out


def prepare_scenario(train: Dataset, test: Dataset, scenario: int, variation_seed: int) -> ScenarioData:
    """Normalise with train statistics, split classes for the scenario and slice per task."""
    train, test, _ = normalize(train, test)
    split = make_scenario(sorted(set(train.classes) | set(test.classes)), scenario, variation_seed)
    return build_scenario(train, test, split)
