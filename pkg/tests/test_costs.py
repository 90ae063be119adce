import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from driftbench.costs import MB, LatencyProfile, profile, storage_bytes
from driftbench.model import Model, ModelConfig
from driftbench.protocol import TaskResult, task_rng, train_one_task
from driftbench.strategies import EWC, ICaRL, NoneStrategy


@pytest.mark.parametrize("method, m, t, table", [
    ("ewc", 0.257, 7, 3.599),
    ("online_ewc", 0.257, 7, 0.514),
    ("si", 0.257, 7, 0.771),
    ("lwf", 0.257, 7, 0.257),
    ("ewc", 0.325, 4, 2.601),
])
def test_storage_against_published_table(method, m, t, table):
    assert abs(storage_bytes(method, m * MB, t) / MB - table) <= 0.01


def test_storage_formulas():
    m, b = 1000.0, 250.0
    assert storage_bytes("icarl", m, 5, b) == m + b
    assert storage_bytes("gem", m, 5, b) == 5 * m + b
    assert storage_bytes("icarl", m, 5, 0) == storage_bytes("lwf", m, 5) == m
    assert storage_bytes("none", m, 3) == m
    # exemplar bytes only count for the rehearsal methods
    assert storage_bytes("ewc", m, 2, b) == 4 * m


@given(st.sampled_from(["ewc", "online_ewc", "si", "lwf", "icarl", "gem", "none"]),
       st.floats(1, 1e9), st.integers(1, 50), st.floats(0, 1e6))
def test_storage_linear_or_constant_in_tasks(method, m, t, b):
    one = storage_bytes(method, m, 1, b)
    many = storage_bytes(method, m, t, b)
    assert many >= m
    if method in ("ewc", "gem"):
        step = storage_bytes(method, m, 2, b) - one
        assert many == pytest.approx(one + (t - 1) * step)
    else:
        assert many == one


def test_storage_errors():
    with pytest.raises(ValueError):
        storage_bytes("replay", 1.0, 1)
    for args in ((0.0, 1), (1.0, 0), (1.0, 1, -1)):
        with pytest.raises(ValueError):
            storage_bytes("ewc", *args)


def test_latency_profile_totals():
    prof = LatencyProfile([1.0, 3.0], [0.5, 0.5])
    assert prof.total == 5.0 and prof.mean_train() == 2.0 and prof.mean_il() == 0.5
    with pytest.raises(ValueError):
        LatencyProfile([1.0], [])
    with pytest.raises(ValueError):
        LatencyProfile([-1.0], [0.0])


def test_profile_accepts_reports_and_results():
    report = {"timing": {"tasks": [{"train_time": 1.0, "il_time": 0.1, "eval_time": 9.0}]}}
    assert profile(report).total == pytest.approx(1.1)
    results = [TaskResult([], [], None, 2.0, 0.2, 0.0), TaskResult([], [], None, 1.0, 0.3, 0.0)]
    assert profile(results).il_time == [0.2, 0.3]

    class Point:
        tasks = results

    assert profile(Point()).total_train == 3.0


def _model(scen):
    d = scen.train[0]
    return Model(ModelConfig(n_features=d.n_features, n_classes=len(scen.task_columns(0)), n_layers=1, hidden=32,
                             n_steps=d.n_steps))


def test_profile_accounts_for_wall_time(small_scenario):
    model = _model(small_scenario)
    start = time.perf_counter()
    res = train_one_task(model, EWC(lam=10.0), small_scenario.train[0], 1, 6, 1e-3, task_rng(0, 1), 8)
    wall = time.perf_counter() - start
    assert profile([res]).total == pytest.approx(wall, rel=0.02)


def test_fisher_cap_drives_ewc_il_time(scenario2):
    def il_time(cap):
        best = float("inf")
        for _ in range(3):
            model = _model(scenario2)
            res = train_one_task(model, EWC(lam=1.0, fisher_cap=cap), scenario2.train[0], 1, 0, 1e-3,
                                 task_rng(0, 1))
            best = min(best, res.il_time)
        return best

    ratio = il_time(128) / il_time(64)
    assert 1.5 <= ratio <= 2.5


def test_none_hooks_are_cheap(small_scenario):
    res = train_one_task(_model(small_scenario), NoneStrategy(), small_scenario.train[0], 1, 3, 1e-3,
                         task_rng(0, 1), 16)
    assert res.il_time < 0.01 * res.train_time


def test_exemplar_bytes_match_store(small_scenario):
    strat = ICaRL(budget=6)
    model = _model(small_scenario)
    train_one_task(model, strat, small_scenario.train[0], 1, 1, 1e-3, task_rng(0, 1), 16)
    assert strat.exemplar_bytes() == strat.store.byte_size() > 0
