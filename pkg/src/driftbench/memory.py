"""Exemplar storage: herding selection, budget reduction and nearest-class-mean."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Model, extract_features

STORE_MAGIC = b"DBEX"
STORE_VERSION = 1
_STORE_CONFIG = struct.Struct("<2IQ3I")
LABEL_BYTES = 2
POLICIES = ("herding", "random")


def budget_per_class(total_budget: int, n_classes: int) -> int:
    if n_classes < 1:
        raise ValueError(f"n_classes must be >= 1, got {n_classes}")
    return max(total_budget // n_classes, 0)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    # zero vectors stay zero instead of turning into NaN
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def herd_select(features: np.ndarray, m: int) -> list[int]:
    """Greedy herding order of ``m`` rows whose running mean tracks the class mean.

    At step k the chosen row minimises
    ``|| mu - (sum_chosen + phi_i) / k ||``; ties go to the lowest index.
    """
    feats = np.asarray(features, dtype=np.float64)
    n = len(feats)
    if not 1 <= m <= n:
        raise ValueError(f"herd_select needs 1 <= m <= n, got m={m}, n={n}")
    mu = feats.mean(axis=0)
    running = np.zeros(feats.shape[1])
    taken = np.zeros(n, dtype=bool)
    order: list[int] = []
    for k in range(1, m + 1):
        dist = np.linalg.norm(mu - (running + feats) / k, axis=1)
        dist[taken] = np.inf
        i = int(np.argmin(dist))
        order.append(i)
        taken[i] = True
        running += feats[i]
    return order


@dataclass
class ExemplarStore:
    """Per-class exemplar windows kept in selection order under a global budget."""

    total_budget: int
    policy: str = "herding"
    seed: int = 0
    exemplars: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.total_budget < 0:
            raise ValueError("total_budget must be non-negative")

    @property
    def classes(self) -> list[int]:
        return sorted(self.exemplars)

    def counts(self) -> dict[int, int]:
        return {c: len(w) for c, w in sorted(self.exemplars.items())}

    def n_samples(self) -> int:
        return sum(len(w) for w in self.exemplars.values())

    def byte_size(self) -> int:
        return sum(len(w) * (w[0].size * 4 + LABEL_BYTES) for w in self.exemplars.values() if len(w))

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        labels = np.concatenate([np.full(len(self.exemplars[c]), c) for c in self.classes])
        windows = np.concatenate([self.exemplars[c] for c in self.classes])
        return windows, labels.astype(np.int64)

    def select(self, model: Model, windows: np.ndarray, m: int, label: int) -> np.ndarray:
        """Pick ``m`` windows of one class by the store's policy, in selection order."""
        if self.policy == "random":
            rng = np.random.default_rng([self.seed, label])
            idx = rng.permutation(len(windows))[:m]
        else:
            feats = _unit_rows(extract_features(model, windows).data)
            idx = herd_select(feats, m)
        return np.asarray(windows)[np.asarray(idx, dtype=np.int64)]


def reduce_exemplars(store: ExemplarStore, new_m: int) -> None:
    """Truncate every class list to its first ``new_m`` entries (at least one kept)."""
    if new_m < 0:
        raise ValueError("new_m must be non-negative")
    keep = max(new_m, 1)
    for c, w in store.exemplars.items():
        store.exemplars[c] = w[:keep]


def add_classes(store: ExemplarStore, model: Model, windows: np.ndarray, labels: np.ndarray) -> None:
    """Rebalance the budget over old plus new classes, then select for the new ones."""
    new = sorted(set(np.unique(labels).tolist()) - set(store.exemplars))
    m = budget_per_class(store.total_budget, len(store.exemplars) + len(new))
    reduce_exemplars(store, m)
    for c in new:
        pool = windows[labels == c]
        store.exemplars[c] = store.select(model, pool, min(max(m, 1), len(pool)), c)


@dataclass
class ClassMeanSet:
    classes: tuple[int, ...]
    means: np.ndarray  # [K, S], unit rows


def compute_class_means(store: ExemplarStore, model: Model) -> ClassMeanSet:
    classes = tuple(store.classes)
    if not classes:
        raise ValueError("exemplar store is empty")
    rows = []
    for c in classes:
        if len(store.exemplars[c]) == 0:
            raise ValueError(f"class {c} has no exemplars")
        feats = _unit_rows(extract_features(model, store.exemplars[c]).data)
        rows.append(_unit_rows(feats.mean(axis=0)))
    return ClassMeanSet(classes, np.stack(rows))


def ncm_classify(features: np.ndarray, means: ClassMeanSet) -> np.ndarray:
    """Nearest unit class mean to each normalised feature; ties go to the lowest id."""
    if len(means.classes) == 0:
        raise ValueError("no class means")
    order = np.argsort(means.classes, kind="stable")
    ids = np.asarray(means.classes)[order]
    mu = means.means[order]
    f = _unit_rows(features)
    dist = np.linalg.norm(f[:, None, :] - mu[None, :, :], axis=2)
    return ids[np.argmin(dist, axis=1)]


def save_store(store: ExemplarStore, path) -> None:
    """DBEX framing: magic, version, config block, then per class label, count, f32 windows."""
    shape = next((w.shape[1:] for w in store.exemplars.values() if len(w)), (0, 0))
    parts = [STORE_MAGIC, struct.pack("<I", STORE_VERSION),
             _STORE_CONFIG.pack(store.total_budget, POLICIES.index(store.policy), store.seed,
                                len(store.exemplars), *shape)]
    for c in store.classes:
        w = store.exemplars[c]
        parts.append(struct.pack("<2I", c, len(w)))
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_store(path) -> ExemplarStore:
    from .data import FormatError

    blob = Path(path).read_bytes()
    if blob[:4] != STORE_MAGIC:
        raise FormatError("bad exemplar-store magic", 0)
    if len(blob) < 8 + _STORE_CONFIG.size:
        raise FormatError("truncated exemplar-store header", len(blob))
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != STORE_VERSION:
        raise FormatError(f"unsupported exemplar-store version {version}", 4)
    budget, policy, seed, n_classes, t, d = _STORE_CONFIG.unpack_from(blob, 8)
    if policy >= len(POLICIES):
        raise FormatError(f"unknown selection policy {policy}", 12)
    store = ExemplarStore(budget, POLICIES[policy], seed)
    offset = 8 + _STORE_CONFIG.size
    for _ in range(n_classes):
        if offset + 8 > len(blob):
            raise FormatError("truncated class record", offset)
        c, count = struct.unpack_from("<2I", blob, offset)
        offset += 8
        n = count * t * d
        if offset + 4 * n > len(blob):
            raise FormatError(f"truncated windows for class {c}", offset)
        store.exemplars[c] = np.frombuffer(blob, "<f4", n, offset).reshape(count, t, d).astype(np.float32)
        offset += 4 * n
    if offset != len(blob):
        raise FormatError("trailing bytes after exemplar store", offset)
    return store
