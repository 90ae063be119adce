import csv
import hashlib
import json
import math

import pytest

from driftbench.cli import ConfigError, aggregate_reports, format_table, load_config, main, parse_config
from driftbench.data import load_dataset
from driftbench.protocol import report_hash_payload

SMALL_SYNTH = """
[data.synth]
n_classes = 4
n_steps = 5
n_features = 3
n_train = 64
n_test = 32
seed = 3
"""


def _write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _run_config(tmp_path, strategy="none", extra="", name="cfg.toml"):
    body = f'strategy = "{strategy}"\nscenario = 2\nepochs = 2\nbatch_size = 16\nseed = 1\n{extra}\n' + SMALL_SYNTH
    return _write(tmp_path, body, name)


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------- synth

def test_synth_default_round_trips(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "d")]) == 0
    train = load_dataset(tmp_path / "d" / "train.dbds")
    test = load_dataset(tmp_path / "d" / "test.dbds")
    assert train.windows.shape == (600, 16, 6) and len(test) == 200 and test.split == "test"
    stats = json.loads((tmp_path / "d" / "stats.json").read_text())
    assert stats["train"]["n"] == 600 and stats["spec"]["n_classes"] == 6


def test_synth_is_deterministic(tmp_path):
    spec = _write(tmp_path, "n_classes = 3\nn_train = 30\nn_test = 9\nseed = 11\n", "synth.toml")
    for name in ("a", "b"):
        assert main(["synth", "--config", spec, "--out", str(tmp_path / name)]) == 0
    for f in ("train.dbds", "test.dbds", "stats.json"):
        assert _digest(tmp_path / "a" / f) == _digest(tmp_path / "b" / f)


def test_synth_rejects_one_class(tmp_path, capsys):
    spec = _write(tmp_path, "n_classes = 1\n", "synth.toml")
    assert main(["synth", "--config", spec, "--out", str(tmp_path / "d")]) == 2
    assert "n_classes" in capsys.readouterr().err
    assert not (tmp_path / "d").exists()


def test_synth_refuses_overwrite(tmp_path):
    out = str(tmp_path / "d")
    assert main(["synth", "--out", out, "--seed", "1"]) == 0
    assert main(["synth", "--out", out]) == 2
    assert main(["synth", "--out", out, "--force", "--seed", "2"]) == 0


# ---------------------------------------------------------------- config validation

@pytest.mark.parametrize("text", [
    'strategy = "none"\nbogus = 1\n',
    'strategy = "nope"\n',
    'strategy = "none"\nscenario = 4\n',
    'strategy = "icarl"\n',
    'strategy = "icarl"\nbudget = 1.5\n',
    'strategy = "none"\nbudget = 0.1\n',
    'strategy = "ewc"\n[params]\nc = 0.2\n',
    'strategy = "online_ewc"\n[params]\ngamma = 0.0\n',
    'strategy = "ewc"\nepochs = "ten"\n',
    'strategy = "ewc"\n[grid]\nlam = []\n',
    'strategy = "none"\n[data]\nsource = "files"\n',
    'strategy = "none"\n[data.synth]\nn_classes = 1\n',
    'strategy = "none"\n[data.synth]\nwidth = 3\n',
])
def test_invalid_configs_are_rejected(tmp_path, text):
    import tomli
    with pytest.raises(ConfigError):
        parse_config(tomli.loads(text))
    path = _write(tmp_path, text)
    assert main(["run", "--config", path, "--out", str(tmp_path / "o"), "--dry-run"]) == 2


def test_seed_precedence(tmp_path, monkeypatch):
    path = _run_config(tmp_path)
    assert load_config(path).seed == 1
    monkeypatch.setenv("DRIFTBENCH_SEED", "7")
    assert load_config(path).seed == 7
    assert load_config(path, seed_flag=9).seed == 9
    monkeypatch.setenv("DRIFTBENCH_SEED", "x")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 2


def test_unknown_command_is_a_config_error():
    assert main(["train"]) == 2


# ---------------------------------------------------------------- run

def test_dry_run_writes_nothing(tmp_path):
    path = _run_config(tmp_path)
    assert main(["run", "--config", path, "--out", str(tmp_path / "o"), "--dry-run"]) == 0
    assert not (tmp_path / "o").exists()


def test_run_writes_report_and_refuses_overwrite(tmp_path):
    path = _run_config(tmp_path)
    out = tmp_path / "o"
    assert main(["run", "--config", path, "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["schema_version"] == 1 and report["config"]["strategy"] == "none"
    assert len(report["accuracy_matrix"]) == 2 and (out / "matrix.csv").exists()
    assert main(["run", "--config", path, "--out", str(out)]) == 2
    assert main(["run", "--config", path, "--out", str(out), "--force"]) == 0


def test_run_is_deterministic(tmp_path):
    path = _run_config(tmp_path, "ewc", "[params]\nlam = 10.0\n")
    for name in ("a", "b"):
        assert main(["run", "--config", path, "--out", str(tmp_path / name)]) == 0
    a, b = (json.loads((tmp_path / n / "report.json").read_text()) for n in ("a", "b"))
    assert report_hash_payload(a) == report_hash_payload(b)


def test_icarl_storage_is_model_plus_exemplars(tmp_path):
    path = _run_config(tmp_path, "icarl", "budget = 0.2\n")
    assert main(["run", "--config", path, "--out", str(tmp_path / "o")]) == 0
    storage = json.loads((tmp_path / "o" / "report.json").read_text())["storage"]
    assert storage["exemplar_bytes"] == math.floor(0.2 * 64) * (5 * 3 * 4 + 2)
    assert storage["total_bytes"] == storage["model_bytes"] + storage["exemplar_bytes"]


def test_runtime_error_exits_3(tmp_path):
    body = 'strategy = "none"\n[data]\nsource = "files"\ntrain = "missing.dbds"\ntest = "missing.dbds"\n'
    path = _write(tmp_path, body)
    assert main(["run", "--config", path, "--out", str(tmp_path / "o")]) == 3


def test_run_from_files_matches_synth(tmp_path):
    spec = _write(tmp_path, "n_classes = 4\nn_steps = 5\nn_features = 3\nn_train = 64\nn_test = 32\nseed = 3\n",
                  "synth.toml")
    assert main(["synth", "--config", spec, "--out", str(tmp_path / "d")]) == 0
    files = (f'strategy = "none"\nscenario = 2\nepochs = 2\nbatch_size = 16\nseed = 1\n[data]\nsource = "files"\n'
             f'train = "{tmp_path / "d" / "train.dbds"}"\ntest = "{tmp_path / "d" / "test.dbds"}"\n')
    assert main(["run", "--config", _write(tmp_path, files, "f.toml"), "--out", str(tmp_path / "f")]) == 0
    assert main(["run", "--config", _run_config(tmp_path), "--out", str(tmp_path / "s")]) == 0
    f, s = (json.loads((tmp_path / n / "report.json").read_text()) for n in ("f", "s"))
    assert f["accuracy_matrix"] == s["accuracy_matrix"]


# ---------------------------------------------------------------- search and joint

def test_singleton_search_equals_run(tmp_path):
    path = _run_config(tmp_path, "ewc", "[params]\nlam = 10.0\n[grid]\nlayers = [1]\nhidden = [32]\n"
                                        "lr = [0.001]\nlam = [10.0]\n")
    assert main(["search", "--config", path, "--out", str(tmp_path / "s")]) == 0
    assert main(["run", "--config", path, "--out", str(tmp_path / "r")]) == 0
    best = json.loads((tmp_path / "s" / "best" / "report.json").read_text())
    run = json.loads((tmp_path / "r" / "report.json").read_text())
    assert report_hash_payload(best) == report_hash_payload(run)
    board = json.loads((tmp_path / "s" / "search.json").read_text())["leaderboard"]
    assert len(board) == 1 and board[0]["accuracy_matrix"] == run["accuracy_matrix"]


def test_leaderboard_is_a_sorted_permutation_of_the_grid(tmp_path):
    path = _run_config(tmp_path, "si", "[grid]\nlayers = [1]\nhidden = [32]\nlr = [0.001, 0.0001]\nc = [0.2, 1.0]\n")
    assert main(["search", "--config", path, "--out", str(tmp_path / "s")]) == 0
    with open(tmp_path / "s" / "leaderboard.csv") as fh:
        rows = list(csv.DictReader(fh))
    configs = sorted(json.loads(r["config"])["lr"] * 10 + json.loads(r["config"])["c"] for r in rows)
    assert configs == sorted(lr * 10 + c for lr in (0.001, 0.0001) for c in (0.2, 1.0))
    q = [float(r["q_final"]) for r in rows]
    assert q == sorted(q, reverse=True) and [int(r["rank"]) for r in rows] == [1, 2, 3, 4]
    best = json.loads((tmp_path / "s" / "best" / "report.json").read_text())
    assert best["union_scores"][-1] == pytest.approx(q[0], abs=1e-6)


def test_search_jobs_match_serial(tmp_path):
    path = _run_config(tmp_path, "si", "[grid]\nlayers = [1]\nhidden = [32]\nlr = [0.001]\nc = [0.2, 1.0]\n")
    assert main(["search", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert main(["search", "--config", path, "--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    assert (tmp_path / "a" / "leaderboard.csv").read_text() == (tmp_path / "b" / "leaderboard.csv").read_text()
    assert main(["search", "--config", path, "--out", str(tmp_path / "c"), "--jobs", "0"]) == 2


def test_joint_command(tmp_path):
    path = _run_config(tmp_path)
    assert main(["joint", "--config", path, "--out", str(tmp_path / "j")]) == 0
    out = json.loads((tmp_path / "j" / "joint.json").read_text())
    assert len(out["joint"]) == 2 and len(out["joint_rows"][1]) == 2


def test_run_with_joint_reports_intransigence(tmp_path):
    path = _run_config(tmp_path, extra="joint = true")
    assert main(["run", "--config", path, "--out", str(tmp_path / "o")]) == 0
    metrics = json.loads((tmp_path / "o" / "report.json").read_text())["metrics"]
    assert len(metrics["I"]) == 2
    assert metrics["I"][1] == pytest.approx(metrics["joint"][1] - metrics["a_kk"][1])


# ---------------------------------------------------------------- report

def _fake_report(strategy, scenario, a, f=0.1):
    return {"schema_version": 1, "config": {"strategy": strategy, "scenario": scenario},
            "metrics": {"A": [1.0, a], "F": [None, f], "a_kk": [1.0, 0.9], "I": []}}


def test_aggregate_single_report_equals_its_metrics():
    rows = aggregate_reports([_fake_report("ewc", 2, 0.6)])
    assert rows[0]["A"] == 0.6 and rows[0]["A_se"] == 0.0 and rows[0]["I"] is None


def test_aggregate_standard_error():
    values = [0.1 * i for i in range(10)]
    rows = aggregate_reports([_fake_report("si", 3, v) for v in values])
    mean = sum(values) / 10
    sd = math.sqrt(sum((v - mean) ** 2 for v in values) / 9)
    assert rows[0]["n"] == 10 and rows[0]["A"] == pytest.approx(mean)
    assert rows[0]["A_se"] == pytest.approx(sd / math.sqrt(10))


def test_aggregate_rejects_mixed_scenarios(tmp_path):
    with pytest.raises(ConfigError):
        aggregate_reports([_fake_report("si", 2, 0.5), _fake_report("si", 3, 0.5)])
    for i, scen in enumerate((2, 3)):
        d = tmp_path / f"r{i}"
        d.mkdir()
        (d / "report.json").write_text(json.dumps(_fake_report("si", scen, 0.5)))
    assert main(["report", str(tmp_path / "r0"), str(tmp_path / "r1")]) == 2


def test_report_command_formats(tmp_path, capsys):
    for i, a in enumerate((0.5, 0.7)):
        d = tmp_path / f"r{i}"
        d.mkdir()
        (d / "report.json").write_text(json.dumps(_fake_report("lwf", 2, a)))
    assert main(["report", str(tmp_path / "r0"), str(tmp_path / "r1"), "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("method,scenario,n,A,A_se")
    assert lines[1].startswith("lwf,2,2,0.6000,0.1000")
    text = format_table(aggregate_reports([_fake_report("lwf", 2, 0.5)]), "text")
    assert text.splitlines()[0].split()[:4] == ["method", "scenario", "n", "A"]
    assert main(["report", str(tmp_path / "missing")]) == 2
