"""Command-line front end: ``synth``, ``run``, ``search``, ``joint`` and ``report``.

Exit codes: 0 success, 2 configuration or validation error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import data as D
from . import protocol as P
from .strategies import STRATEGIES

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
SEED_ENV = "DRIFTBENCH_SEED"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

_TOP = {"seed": int, "strategy": str, "scenario": int, "variation_seed": int, "epochs": int,
        "batch_size": int, "budget": float, "joint": bool, "out": str}
_SECTIONS = {
    "data": {"source": str, "train": str, "test": str, "n_steps": int, "n_features": int, "synth": dict},
    "model": {"layers": int, "hidden": int},
    "params": {"lr": float, "lam": float, "gamma": float, "c": float, "damp": float, "fisher_cap": int,
               "temperature": float, "policy": str},
    "grid": {"layers": list, "hidden": list, "lr": list, "lam": list, "gamma": list, "c": list},
}
_FIXED_PARAMS = ("damp", "fisher_cap", "temperature", "policy")


def _check_type(where: str, value, kind) -> None:
    ok = isinstance(value, kind) and not (kind is int and isinstance(value, bool))
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        ok = True
    if not ok:
        raise ConfigError(f"{where}: expected {kind.__name__}, got {type(value).__name__}")


def _check_table(where: str, table: dict, schema: dict) -> None:
    for key, value in table.items():
        if key not in schema:
            raise ConfigError(f"unknown key {where}{key!r}; allowed: {sorted(schema)}")
        _check_type(f"{where}{key}", value, schema[key])


@dataclass
class RunConfig:
    """Fully validated experiment description; ``resolved()`` is what reports carry."""

    strategy: str = "none"
    seed: int = 0
    scenario: int = 2
    variation_seed: int = 0
    epochs: int = P.DEFAULT_EPOCHS
    batch_size: int = P.BATCH_SIZE
    budget: float | None = None
    joint: bool = True
    out: str | None = None
    data: dict = field(default_factory=lambda: {"source": "synth"})
    model: dict = field(default_factory=lambda: {"layers": 1, "hidden": 32})
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        return asdict(self)

    def synth_spec(self) -> D.SynthSpec:
        return D.SynthSpec(**self.data.get("synth", {}))

    def run_grid(self) -> P.Grid:
        """Singleton grid for a single run."""
        p = self.params
        return P.Grid(layers=(self.model["layers"],), hidden=(self.model["hidden"],),
                      lr=(float(p.get("lr", 1e-3)),), lam=(float(p.get("lam", 1.0)),),
                      gamma=(float(p.get("gamma", 1.0)),), c=(float(p.get("c", 0.2)),))

    def search_grid(self) -> P.Grid:
        g = {k: tuple(float(x) if k not in ("layers", "hidden") else int(x) for x in v)
             for k, v in self.grid.items()}
        return P.Grid(**g)

    def fixed_params(self) -> dict:
        return {k: self.params[k] for k in _FIXED_PARAMS if k in self.params}


def parse_config(raw: dict) -> RunConfig:
    """Validate a parsed TOML document; every problem raises :class:`ConfigError`."""
    cfg = RunConfig()
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            _check_table(f"{key}.", value, _SECTIONS[key])
            continue
        if key not in _TOP:
            raise ConfigError(f"unknown key {key!r}; allowed: {sorted(_TOP) + sorted(_SECTIONS)}")
        _check_type(key, value, _TOP[key])
        setattr(cfg, key, value)
    if "data" in raw:
        cfg.data = {"source": "synth", **raw["data"]}
    if "model" in raw:
        cfg.model = {**cfg.model, **raw["model"]}
    cfg.params = dict(raw.get("params", {}))
    cfg.grid = dict(raw.get("grid", {}))

    if cfg.strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}, got {cfg.strategy!r}")
    if cfg.scenario not in (1, 2, 3):
        raise ConfigError(f"scenario must be 1, 2 or 3, got {cfg.scenario}")
    if cfg.epochs < 0 or cfg.batch_size < 1:
        raise ConfigError("epochs must be >= 0 and batch_size >= 1")
    if cfg.strategy in ("icarl", "gem"):
        if cfg.budget is None:
            raise ConfigError(f"{cfg.strategy} needs a budget fraction")
        if not 0.0 < cfg.budget <= 1.0:
            raise ConfigError(f"budget must be a fraction in (0, 1], got {cfg.budget}")
    elif cfg.budget is not None:
        raise ConfigError(f"budget only applies to icarl and gem, not {cfg.strategy}")

    src = cfg.data.get("source")
    if src == "synth":
        extra = set(cfg.data) - {"source", "synth"}
        if extra:
            raise ConfigError(f"synthetic data takes no {sorted(extra)}")
        synth = cfg.data.get("synth", {})
        _check_table("data.synth.", synth, _SYNTH_KEYS_TYPES)
        try:
            cfg.synth_spec()
        except ValueError as exc:
            raise ConfigError(f"data.synth: {exc}") from None
    elif src in ("files", "csv"):
        missing = {"train", "test"} - set(cfg.data)
        if src == "csv":
            missing |= {"n_steps", "n_features"} - set(cfg.data)
        if missing:
            raise ConfigError(f"data source {src!r} needs {sorted(missing)}")
    else:
        raise ConfigError(f"data.source must be 'synth', 'files' or 'csv', got {src!r}")

    if cfg.model["layers"] < 1 or cfg.model["hidden"] < 1:
        raise ConfigError("model layers and hidden must be positive")
    allowed = set(P.IL_PARAMS.get(cfg.strategy, ())) | {"lr"} | _fixed_for(cfg.strategy)
    bad = set(cfg.params) - allowed
    if bad:
        raise ConfigError(f"params {sorted(bad)} do not apply to {cfg.strategy}")
    gamma = cfg.params.get("gamma")
    if gamma is not None and not 0.0 < gamma <= 1.0:
        raise ConfigError(f"gamma must be in (0, 1], got {gamma}")
    for key in ("lr", "lam", "c", "damp", "temperature"):
        if key in cfg.params and cfg.params[key] < 0:
            raise ConfigError(f"params.{key} must be non-negative")
    if cfg.params.get("policy", "herding") not in ("herding", "random"):
        raise ConfigError("params.policy must be 'herding' or 'random'")
    for key, values in cfg.grid.items():
        if not values:
            raise ConfigError(f"grid.{key} is empty")
        for v in values:
            _check_type(f"grid.{key}[]", v, int if key in ("layers", "hidden") else float)
    return cfg


_SYNTH_KEYS_TYPES = {"n_classes": int, "n_steps": int, "n_features": int, "n_train": int, "n_test": int,
                     "separation": float, "ar_coef": float, "noise": float, "seed": int}


def _fixed_for(kind: str) -> set[str]:
    return {"ewc": {"fisher_cap"}, "online_ewc": {"fisher_cap"}, "si": {"damp"},
            "lwf": {"temperature"}, "icarl": {"temperature", "policy"}}.get(kind, set())


def load_config(path, seed_flag: int | None = None) -> RunConfig:
    try:
        raw = tomllib.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = parse_config(raw)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            cfg.seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if seed_flag is not None:
        cfg.seed = seed_flag
    return cfg


# ---------------------------------------------------------------- data

def load_scenario(cfg: RunConfig) -> tuple[D.ScenarioData, int]:
    """Scenario data plus the size of the whole training corpus."""
    src = cfg.data["source"]
    if src == "synth":
        train, test = D.synth_generate(cfg.synth_spec())
    elif src == "files":
        train = D.load_dataset(cfg.data["train"], "train")
        test = D.load_dataset(cfg.data["test"], "test")
    else:
        train = D.load_csv(cfg.data["train"], cfg.data["n_steps"], cfg.data["n_features"], "train")
        test = D.load_csv(cfg.data["test"], cfg.data["n_steps"], cfg.data["n_features"], "test")
    return D.prepare_scenario(train, test, cfg.scenario, cfg.variation_seed), len(train)


def run_spec(cfg: RunConfig, corpus: int) -> P.RunSpec:
    budget = math.floor(cfg.budget * corpus) if cfg.budget is not None else 0
    return P.RunSpec(cfg.strategy, cfg.epochs, cfg.seed, budget, cfg.batch_size, cfg.fixed_params())


def _out_dir(cfg: RunConfig, flag: str | None) -> Path:
    out = flag or cfg.out
    if not out:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    return Path(out)


# ---------------------------------------------------------------- commands

def execute_run(cfg: RunConfig) -> dict:
    """One strategy over the scenario's tasks with fixed hyperparameters; returns the report."""
    start = time.perf_counter()
    scen, corpus = load_scenario(cfg)
    grid = cfg.run_grid()
    result = P.algorithm1_search(scen, run_spec(cfg, corpus), grid)
    joint = P.joint_baseline(scen, grid, cfg.epochs, cfg.seed, cfg.batch_size) if cfg.joint else None
    return P.build_report(cfg.resolved(), scen, result.best, joint, time.perf_counter() - start)


def cmd_synth(args) -> int:
    raw = {}
    if args.config:
        try:
            raw = tomllib.loads(Path(args.config).read_text())
        except (FileNotFoundError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(str(exc)) from None
    _check_table("", raw, _SYNTH_KEYS_TYPES)
    if os.environ.get(SEED_ENV) is not None:
        raw["seed"] = int(os.environ[SEED_ENV])
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        spec = D.SynthSpec(**raw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not args.out:
        raise ConfigError("synth needs --out")
    out = Path(args.out)
    if args.dry_run:
        return EXIT_OK
    if (out / "train.dbds").exists() and not args.force:
        raise FileExistsError(f"{out} already holds a dataset; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    train, test = D.synth_generate(spec)
    D.save_dataset(train, out / "train.dbds")
    D.save_dataset(test, out / "test.dbds")
    stats = {"spec": asdict(spec), "train": _stats(train), "test": _stats(test)}
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _stats(ds: D.Dataset) -> dict:
    counts = {str(c): int((ds.labels == c).sum()) for c in ds.classes}
    w = ds.windows.astype("float64")
    return {"n": len(ds), "n_steps": ds.n_steps, "n_features": ds.n_features, "class_counts": counts,
            "mean": round(float(w.mean()), 6), "std": round(float(w.std()), 6)}


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = _out_dir(cfg, args.out)
    if args.dry_run:
        return EXIT_OK
    if (out / "report.json").exists() and not args.force:
        raise FileExistsError(f"{out / 'report.json'} exists; pass --force to overwrite")
    P.write_report(execute_run(cfg), out, force=args.force)
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = _out_dir(cfg, args.out)
    grid = cfg.search_grid()
    if grid.size(cfg.strategy) == 0:
        raise ConfigError("search grid is empty")
    if args.dry_run:
        return EXIT_OK
    if (out / "leaderboard.csv").exists() and not args.force:
        raise FileExistsError(f"{out} holds a search; pass --force to overwrite")
    start = time.perf_counter()
    scen, corpus = load_scenario(cfg)
    result = P.algorithm1_search(scen, run_spec(cfg, corpus), grid, jobs=args.jobs)
    joint = P.joint_baseline(scen, grid, cfg.epochs, cfg.seed, cfg.batch_size) if cfg.joint else None
    report = P.build_report(cfg.resolved(), scen, result.best, joint, time.perf_counter() - start)
    P.write_report(report, out / "best", force=args.force)
    rows = []
    for rank, point in enumerate(result.leaderboard(), start=1):
        rows.append({"rank": rank, "config": point.key(), "q_final": point.q_final,
                     "A_final": P.metric_A(point.matrix, point.matrix.n_tasks),
                     "accuracy_matrix": point.matrix.to_rows(), "union_scores": point.union_scores})
    (out / "search.json").write_text(json.dumps({
        "schema_version": P.SCHEMA_VERSION, "config": cfg.resolved(),
        "stage1": [{"layers": s.layers, "hidden": s.hidden, "score": s.score} for s in result.stage1],
        "leaderboard": rows}, indent=2, sort_keys=True) + "\n")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rank", "config", "q_final", "A_final"])
    for r in rows:
        writer.writerow([r["rank"], r["config"], f"{r['q_final']:.6f}", f"{r['A_final']:.6f}"])
    (out / "leaderboard.csv").write_text(buf.getvalue())
    return EXIT_OK


def cmd_joint(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = _out_dir(cfg, args.out)
    if args.dry_run:
        return EXIT_OK
    target = out / "joint.json"
    if target.exists() and not args.force:
        raise FileExistsError(f"{target} exists; pass --force to overwrite")
    scen, _ = load_scenario(cfg)
    grid = cfg.search_grid() if cfg.grid else cfg.run_grid()
    res = P.joint_baseline(scen, grid, cfg.epochs, cfg.seed, cfg.batch_size)
    out.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps({
        "schema_version": P.SCHEMA_VERSION, "config": cfg.resolved(),
        "split": [list(g) for g in scen.split.tasks], "joint": res.scores, "joint_rows": res.rows,
        "joint_A": [res.metric_A(k) for k in range(1, len(res.scores) + 1)],
        "architecture": [list(a) for a in res.arch]}, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


REPORT_COLUMNS = ("A", "F", "a_kk", "I")


def aggregate_reports(reports: list[dict]) -> list[dict]:
    """Final-task A, F, a_kk and I per method: mean and standard error over reports."""
    scenarios = {r["config"]["scenario"] for r in reports}
    if len(scenarios) != 1:
        raise ConfigError(f"reports mix scenarios {sorted(scenarios)}")
    scenario = scenarios.pop()
    by_method: dict[str, list[dict]] = {}
    for r in reports:
        by_method.setdefault(r["config"]["strategy"], []).append(r)
    rows = []
    for method in sorted(by_method):
        group = by_method[method]
        row = {"method": method, "scenario": scenario, "n": len(group)}
        for col in REPORT_COLUMNS:
            vals = [r["metrics"][col][-1] for r in group if r["metrics"].get(col) and r["metrics"][col][-1] is not None]
            if not vals:
                row[col], row[col + "_se"] = None, None
                continue
            mean = sum(vals) / len(vals)
            if len(vals) > 1:
                sd = math.sqrt(sum((v - mean) ** 2 for v in vals) / (len(vals) - 1))
                se = sd / math.sqrt(len(vals))
            else:
                se = 0.0
            row[col], row[col + "_se"] = mean, se
        rows.append(row)
    return rows


def format_table(rows: list[dict], fmt: str) -> str:
    header = ["method", "scenario", "n"] + [c for col in REPORT_COLUMNS for c in (col, col + "_se")]
    cells = [[str(r["method"]), str(r["scenario"]), str(r["n"])]
             + ["" if r[c] is None else f"{r[c]:.4f}" for col in REPORT_COLUMNS for c in (col, col + "_se")]
             for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(cells)
        return buf.getvalue()
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    reports = []
    for d in args.run_dirs:
        path = Path(d) / "report.json" if Path(d).is_dir() else Path(d)
        if not path.exists():
            raise ConfigError(f"no report at {path}")
        try:
            report = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if report.get("schema_version") != P.SCHEMA_VERSION:
            raise ConfigError(f"{path}: unsupported schema_version {report.get('schema_version')}")
        reports.append(report)
    text = format_table(aggregate_reports(reports), args.format)
    if args.dry_run:
        return EXIT_OK
    if args.out:
        target = Path(args.out)
        if target.exists() and not args.force:
            raise FileExistsError(f"{target} exists; pass --force to overwrite")
        target.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftbench", description="Class-incremental learning benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="TOML configuration file")
        p.add_argument("--seed", type=int, help=f"global seed (overrides {SEED_ENV} and the config)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--dry-run", action="store_true", help="validate and exit without writing")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    common(sub.add_parser("synth", help="generate the synthetic benchmark"), config_required=False)
    common(sub.add_parser("run", help="train one strategy over a scenario"))
    p = sub.add_parser("search", help="two-stage hyperparameter search")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel grid points")
    common(sub.add_parser("joint", help="joint-training baseline"))
    p = sub.add_parser("report", help="aggregate run reports")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--out")
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--force", action="store_true")
    return parser


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "search": cmd_search, "joint": cmd_joint, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 3
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
