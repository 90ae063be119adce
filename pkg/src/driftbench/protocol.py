"""Training loop, evaluation matrix, A/F/I metrics and the two-stage model search.

Model selection scores (per-epoch snapshots and the grid winner) are taken
on the test split.  That mirrors the benchmark protocol being reproduced;
it is not a recommended practice for new work.
"""

from __future__ import annotations

import copy
import csv
import io
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, ScenarioData, class_weights, concat
from .model import GRID_HIDDEN, GRID_LAYERS, Model, ModelConfig, expand_head, forward
from .numerics import AdamState, Tape, adam_step, ops
from .strategies import IL_PARAMS, NoneStrategy, StepContext, Strategy, make_strategy

SCHEMA_VERSION = 1
DEFAULT_EPOCHS = 20
BATCH_SIZE = 32
DEFAULT_LR = (1e-3, 1e-4)
DEFAULT_LAMBDA = (1.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e6)
DEFAULT_GAMMA = (0.5, 1.0)
DEFAULT_C = (0.2, 0.4, 0.6, 0.8, 1.0)


# ---------------------------------------------------------------- metrics

def weighted_f1(predictions, labels) -> float:
    """Per-class F1 averaged with support weights; classes absent from ``labels`` are skipped."""
    pred = np.asarray(predictions).reshape(-1)
    true = np.asarray(labels).reshape(-1)
    if pred.shape != true.shape:
        raise ValueError(f"predictions ({pred.size}) and labels ({true.size}) differ in length")
    if true.size == 0:
        raise ValueError("labels must be nonempty")
    total = 0.0
    for c in np.unique(true):
        tp = float(np.sum((pred == c) & (true == c)))
        n_pred = float(np.sum(pred == c))
        n_true = float(np.sum(true == c))
        f1 = 0.0 if tp == 0 else 2.0 * tp / (n_pred + n_true)
        total += f1 * n_true
    return total / true.size


class AccuracyMatrix:
    """Lower-triangular ``a[k][j]`` with 1-based task indices."""

    def __init__(self, n_tasks: int):
        if n_tasks < 1:
            raise ValueError("need at least one task")
        self.values = np.full((n_tasks, n_tasks), np.nan)

    @classmethod
    def from_rows(cls, rows) -> "AccuracyMatrix":
        out = cls(len(rows))
        for k, row in enumerate(rows, start=1):
            for j, v in enumerate(row, start=1):
                if j <= k and v is not None:
                    out.set(k, j, v)
        return out

    @property
    def n_tasks(self) -> int:
        return len(self.values)

    def set(self, k: int, j: int, value: float) -> None:
        if not 1 <= j <= k <= self.n_tasks:
            raise IndexError(f"a[{k}][{j}] is outside the lower triangle of {self.n_tasks} tasks")
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"performance must be in [0, 1], got {value}")
        self.values[k - 1, j - 1] = value

    def get(self, k: int, j: int) -> float:
        return float(self.values[k - 1, j - 1])

    def row(self, k: int) -> np.ndarray:
        r = self.values[k - 1, :k]
        if np.any(np.isnan(r)):
            raise ValueError(f"row {k} of the accuracy matrix is incomplete")
        return r

    def completed(self) -> int:
        done = 0
        for k in range(1, self.n_tasks + 1):
            if np.any(np.isnan(self.values[k - 1, :k])):
                break
            done = k
        return done

    def to_rows(self) -> list[list[float | None]]:
        return [[None if np.isnan(v) else float(v) for v in self.values[k, :k + 1]] for k in range(self.n_tasks)]


def metric_A(matrix: AccuracyMatrix, k: int) -> float:
    return float(np.sum(matrix.row(k)) / k)


def metric_F(matrix: AccuracyMatrix, k: int) -> tuple[float, list[float]]:
    """Average forgetting at ``k`` and the per-task drops ``f_j^k`` for ``j < k``."""
    if k < 2:
        raise ValueError("forgetting needs k >= 2")
    for l in range(1, k + 1):
        matrix.row(l)
    drops = []
    for j in range(1, k):
        best = max(matrix.get(l, j) for l in range(j, k))
        drops.append(best - matrix.get(k, j))
    return float(np.sum(drops) / (k - 1)), drops


def metric_I(joint_score: float, a_kk: float) -> float:
    return float(joint_score - a_kk)


# ---------------------------------------------------------------- training

@dataclass
class TaskResult:
    epoch_losses: list[float]
    epoch_scores: list[float]
    best_epoch: int | None
    train_time: float
    il_time: float
    eval_time: float


class _HookTimer:
    __slots__ = ("elapsed", "_start")

    def __init__(self):
        self.elapsed = 0.0

    def __enter__(self):
        self._start = time.perf_counter()

    def __exit__(self, *exc):
        self.elapsed += time.perf_counter() - self._start


def train_one_task(model: Model, strategy: Strategy, task_data: Dataset, task_index: int, epochs: int,
                   lr: float, rng: np.random.Generator, batch_size: int = BATCH_SIZE,
                   score_fn=None, restore_best: bool = True) -> TaskResult:
    """Train on one task with fresh Adam state, then run the strategy's ``after_task``.

    When ``score_fn(model, strategy)`` is given it is evaluated after every
    epoch; with ``restore_best`` the best-scoring epoch's parameters are
    restored before ``after_task``.  Scoring wall time is reported separately
    as ``eval_time``.
    """
    if task_data.labels.max() >= model.n_classes:
        raise ValueError(f"task labels reach {task_data.labels.max()} but the head has {model.n_classes} columns")
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    hooks = _HookTimer()
    eval_time = 0.0
    start = time.perf_counter()
    with hooks:
        data = strategy.before_task(task_index, task_data, model)
    params = model.parameters()
    weights = class_weights(data.labels, model.n_classes)
    state = AdamState.fresh(params, lr)
    losses: list[float] = []
    scores: list[float] = []
    best_score, best_epoch, best_snap = -np.inf, None, None
    n = len(data)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            x, y = data.windows[idx], data.labels[idx]
            with Tape() as tape:
                logits = forward(model, x, True, rng)
                base = ops.weighted_softmax_xent(logits, y, weights)
                ctx = StepContext(model, x, y, logits, task_index)
                with hooks:
                    loss = strategy.augment_loss(base, ctx)
            grads = tape.gradient(loss, params)
            with hooks:
                grads = strategy.post_backward(grads, ctx)
            deltas = adam_step(params, grads, state)
            with hooks:
                strategy.after_step(grads, deltas)
            total += float(base.item()) * len(idx)
        losses.append(total / n)
        if score_fn is not None:
            t0 = time.perf_counter()
            q = float(score_fn(model, strategy))
            scores.append(q)
            if q > best_score:
                best_score, best_epoch, best_snap = q, epoch, model.snapshot()
            eval_time += time.perf_counter() - t0
    if restore_best and best_snap is not None:
        model.load_snapshot(best_snap)
    else:
        best_epoch = None
    with hooks:
        strategy.after_task(task_data, model)
    wall = time.perf_counter() - start - eval_time
    return TaskResult(losses, scores, best_epoch, wall - hooks.elapsed, hooks.elapsed, eval_time)


def evaluate(model: Model, strategy: Strategy, test_data: Dataset | list[Dataset]) -> float:
    """Weighted F1 of the strategy's predictions; a list of datasets is scored as their union."""
    data = concat(test_data) if isinstance(test_data, (list, tuple)) else test_data
    if data.labels.max() >= model.n_classes:
        raise ValueError(f"test data has class {data.labels.max()} the model has not seen")
    return weighted_f1(strategy.predict(model, data.windows), data.labels)


# ---------------------------------------------------------------- search

@dataclass(frozen=True)
class Grid:
    layers: tuple[int, ...] = GRID_LAYERS
    hidden: tuple[int, ...] = GRID_HIDDEN
    lr: tuple[float, ...] = DEFAULT_LR
    lam: tuple[float, ...] = DEFAULT_LAMBDA
    gamma: tuple[float, ...] = DEFAULT_GAMMA
    c: tuple[float, ...] = DEFAULT_C

    def arch_points(self) -> list[tuple[int, int]]:
        return list(itertools.product(self.layers, self.hidden))

    def il_points(self, kind: str) -> list[dict]:
        names = IL_PARAMS.get(kind, ())
        axes = [("lr", self.lr)] + [(n, getattr(self, n)) for n in names]
        return [dict(zip([a for a, _ in axes], combo)) for combo in itertools.product(*(v for _, v in axes))]

    def size(self, kind: str) -> int:
        return len(self.arch_points()) * len(self.il_points(kind))


def _seed_int(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def task_rng(seed: int, j: int) -> np.random.Generator:
    return np.random.default_rng([seed, j])


@dataclass
class RunSpec:
    """Everything a grid point needs besides the data."""

    strategy: str
    epochs: int = DEFAULT_EPOCHS
    seed: int = 0
    budget: int = 0
    batch_size: int = BATCH_SIZE
    fixed: dict = field(default_factory=dict)


@dataclass
class Stage1Result:
    layers: int
    hidden: int
    score: float
    task: TaskResult
    a11: float
    model: Model
    strategy: Strategy


@dataclass
class PointResult:
    layers: int
    hidden: int
    il_params: dict
    matrix: AccuracyMatrix
    union_scores: list[float]
    tasks: list[TaskResult]
    model: Model
    strategy: Strategy

    @property
    def q_final(self) -> float:
        return self.union_scores[-1]

    def key(self) -> str:
        return json.dumps({"layers": self.layers, "hidden": self.hidden, **self.il_params}, sort_keys=True)


@dataclass
class SearchResult:
    stage1: list[Stage1Result]
    points: list[PointResult]
    best: PointResult

    def leaderboard(self) -> list[PointResult]:
        return sorted(self.points, key=lambda p: (-p.q_final, p.key()))


def _stage1(scen: ScenarioData, spec: RunSpec, layers: int, hidden: int, lr: float) -> Stage1Result:
    train, test = scen.train[0], scen.test[0]
    cfg = ModelConfig(n_features=train.n_features, n_classes=len(scen.task_columns(0)), n_layers=layers,
                      hidden=hidden, n_steps=train.n_steps, seed=spec.seed)
    model = Model(cfg)
    strategy = make_strategy(spec.strategy, seed=spec.seed, budget=spec.budget, **spec.fixed)
    res = train_one_task(model, strategy, train, 1, spec.epochs, lr, task_rng(spec.seed, 1), spec.batch_size,
                         score_fn=lambda m, s: evaluate(m, s, test))
    score = max(res.epoch_scores) if res.epoch_scores else evaluate(model, strategy, test)
    return Stage1Result(layers, hidden, score, res, evaluate(model, strategy, test), model, strategy)


def _stage2(scen: ScenarioData, spec: RunSpec, start: Stage1Result, il_params: dict) -> PointResult:
    model, strategy = copy.deepcopy((start.model, start.strategy))
    lr = il_params["lr"]
    strategy.set_params(**{k: v for k, v in il_params.items() if k != "lr"})
    matrix = AccuracyMatrix(scen.n_tasks)
    matrix.set(1, 1, start.a11)
    union = [start.a11]
    tasks = [start.task]
    for j in range(2, scen.n_tasks + 1):
        expand_head(model, len(scen.task_columns(j - 1)), _seed_int(spec.seed, 1000 + j))
        seen = scen.test[:j]
        res = train_one_task(model, strategy, scen.train[j - 1], j, spec.epochs, lr, task_rng(spec.seed, j),
                             spec.batch_size, score_fn=lambda m, s: evaluate(m, s, seen), restore_best=False)
        tasks.append(res)
        for l in range(1, j + 1):
            matrix.set(j, l, evaluate(model, strategy, scen.test[l - 1]))
        union.append(evaluate(model, strategy, seen))
    return PointResult(start.layers, start.hidden, dict(il_params), matrix, union, tasks, model, strategy)


def _run_jobs(fn, arg_list: list[tuple], jobs: int) -> list:
    if jobs <= 1 or len(arg_list) <= 1:
        return [fn(*args) for args in arg_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *args) for args in arg_list]
        return [f.result() for f in futures]


def algorithm1_search(scen: ScenarioData, spec: RunSpec, grid: Grid, jobs: int = 1) -> SearchResult:
    """Two-stage search: architecture on task 1, then learning rate and IL parameters on tasks 2..k.

    Stage 1 keeps the best task-1 epoch of each architecture.  Every stage-2
    point starts from a copy of the stage-1 winner and trains each later task
    for the full epoch budget; per-epoch union scores are only recorded.  The
    winner is the point with the highest union-test score after the last
    task; ties go to the lexicographically smallest serialized config.
    """
    arch = grid.arch_points()
    il = grid.il_points(spec.strategy)
    if not arch or not il:
        raise ValueError("search grid is empty")
    if scen.n_tasks < 2:
        raise ValueError("the search needs at least two tasks")
    stage1_lr = grid.lr[0]
    stage1 = _run_jobs(_stage1, [(scen, spec, l, s, stage1_lr) for l, s in arch], jobs)
    winner = stage1[0]
    for r in stage1[1:]:
        if r.score > winner.score:
            winner = r
    points = _run_jobs(_stage2, [(scen, spec, winner, p) for p in il], jobs)
    best = sorted(points, key=lambda p: (-p.q_final, p.key()))[0]
    return SearchResult(stage1, points, best)


# ---------------------------------------------------------------- joint baseline

@dataclass
class JointResult:
    scores: list[float]  # a*_k on the pooled test set
    rows: list[list[float]]  # per-task columns of the joint model at each k
    arch: list[tuple[int, int]]

    def metric_A(self, k: int) -> float:
        return float(np.mean(self.rows[k - 1]))


def joint_baseline(scen: ScenarioData, grid: Grid, epochs: int, seed: int = 0,
                   batch_size: int = BATCH_SIZE, upto: int | None = None) -> JointResult:
    """Fresh model per k on the pooled data of tasks 1..k, architecture swept as in stage 1."""
    upto = scen.n_tasks if upto is None else upto
    lr = grid.lr[0]
    scores, rows, archs = [], [], []
    for k in range(1, upto + 1):
        train = concat(scen.train[:k])
        test = concat(scen.test[:k])
        best = None
        for layers, hidden in grid.arch_points():
            cfg = ModelConfig(n_features=train.n_features, n_classes=scen.classes_through(k - 1),
                              n_layers=layers, hidden=hidden, n_steps=train.n_steps, seed=seed)
            model = Model(cfg)
            strat = NoneStrategy()
            res = train_one_task(model, strat, train, 1, epochs, lr, task_rng(seed, 1), batch_size,
                                 score_fn=lambda m, s: evaluate(m, s, test))
            score = max(res.epoch_scores) if res.epoch_scores else evaluate(model, strat, test)
            if best is None or score > best[0]:
                best = (score, model, (layers, hidden))
        score, model, arch = best
        scores.append(score)
        rows.append([evaluate(model, NoneStrategy(), scen.test[j]) for j in range(k)])
        archs.append(arch)
    return JointResult(scores, rows, archs)


# ---------------------------------------------------------------- reports

def metrics_summary(matrix: AccuracyMatrix, joint: JointResult | None = None) -> dict:
    k_max = matrix.completed()
    out: dict = {"A": [], "F": [], "forgetting": [], "a_kk": [], "I": [], "joint": [], "joint_A": []}
    for k in range(1, k_max + 1):
        out["A"].append(metric_A(matrix, k))
        out["a_kk"].append(matrix.get(k, k))
        if k >= 2:
            f, drops = metric_F(matrix, k)
            out["F"].append(f)
            out["forgetting"].append(drops)
        else:
            out["F"].append(None)
            out["forgetting"].append([])
        if joint is not None and k <= len(joint.scores):
            out["joint"].append(joint.scores[k - 1])
            out["joint_A"].append(joint.metric_A(k))
            out["I"].append(metric_I(joint.scores[k - 1], matrix.get(k, k)))
    return out


def build_report(config: dict, scen: ScenarioData, point: PointResult, joint: JointResult | None,
                 run_wall: float | None = None) -> dict:
    from .costs import storage_bytes

    m_bytes = point.model.param_count() * 4
    b_bytes = point.strategy.exemplar_bytes()
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "split": [list(g) for g in scen.split.tasks],
        "architecture": {"layers": point.layers, "hidden": point.hidden},
        "il_params": point.il_params,
        "accuracy_matrix": point.matrix.to_rows(),
        "union_scores": point.union_scores,
        "best_epochs": [t.best_epoch for t in point.tasks],
        "epoch_scores": [t.epoch_scores for t in point.tasks],
        "metrics": metrics_summary(point.matrix, joint),
        "storage": {
            "method": point.strategy.name,
            "model_bytes": m_bytes,
            "tasks": scen.n_tasks,
            "exemplar_bytes": b_bytes,
            "total_bytes": storage_bytes(point.strategy.name, m_bytes, scen.n_tasks, b_bytes),
        },
        "notes": {
            "optimizer": "Adam state is reset at the start of every task",
            "selection": "per-epoch snapshots and grid winners are chosen on test-split scores",
        },
        "timing": {
            "tasks": [{"train_time": t.train_time, "il_time": t.il_time, "eval_time": t.eval_time}
                      for t in point.tasks],
        },
    }
    if joint is not None:
        report["joint_architecture"] = [list(a) for a in joint.arch]
        report["joint_rows"] = joint.rows
    if run_wall is not None:
        report["timing"]["wall_time"] = run_wall
    return report


def report_hash_payload(report: dict) -> bytes:
    """Canonical bytes of a report with the timing block removed."""
    body = {k: v for k, v in report.items() if k != "timing"}
    return json.dumps(body, sort_keys=True).encode()


def matrix_csv(matrix_rows: list[list[float | None]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    n = len(matrix_rows)
    writer.writerow(["k"] + [f"task_{j}" for j in range(1, n + 1)])
    for k, row in enumerate(matrix_rows, start=1):
        writer.writerow([k] + [f"{v:.6f}" if v is not None else "" for v in row] + [""] * (n - len(row)))
    return buf.getvalue()


def write_report(report: dict, out_dir, force: bool = False) -> Path:
    out = Path(out_dir)
    target = out / "report.json"
    if target.exists() and not force:
        raise FileExistsError(f"{target} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "matrix.csv").write_text(matrix_csv(report["accuracy_matrix"]))
    return target


def spec_dict(spec: RunSpec) -> dict:
    return asdict(spec)
