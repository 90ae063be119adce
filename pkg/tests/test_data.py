import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from driftbench.data import (Dataset, FormatError, SynthSpec, TaskSplit, build_scenario, class_weights, concat,
                             filter_by_classes, load_csv, load_dataset, make_scenario, normalize, prepare_scenario,
                             save_dataset, synth_generate)


def _toy(n=6, t=3, d=2, classes=(0, 1, 2), seed=0, split="train"):
    rng = np.random.default_rng(seed)
    labels = np.array([classes[i % len(classes)] for i in range(n)])
    return Dataset(rng.standard_normal((n, t, d)), labels, classes, split)


@pytest.mark.parametrize("n, scenario, sizes", [
    (6, 1, (5, 1)),
    (12, 3, (6, 1, 1, 1, 1, 1, 1)),
    (7, 2, (3, 4)),
    (6, 2, (3, 3)),
])
def test_scenario_shapes(n, scenario, sizes):
    split = make_scenario(range(n), scenario, variation_seed=4)
    assert tuple(len(g) for g in split.tasks) == sizes
    assert sorted(split.arrival_order) == list(range(n))


def test_scenario1_seed_sweep_holds_out_every_class():
    held = {make_scenario(range(6), 1, s).tasks[1][0] for s in range(6)}
    assert held == set(range(6))


def test_scenario_rejects_bad_input():
    with pytest.raises(ValueError):
        make_scenario(range(6), 4, 0)
    with pytest.raises(ValueError):
        make_scenario([1], 2, 0)
    with pytest.raises(ValueError):
        make_scenario(range(3), 3, 0)


@given(st.integers(2, 20), st.sampled_from([1, 2, 3]), st.integers(0, 10_000))
def test_scenario_partitions_classes(n, scenario, seed):
    if scenario == 3 and n < 4:
        return
    split = make_scenario(range(n), scenario, seed)
    flat = split.arrival_order
    assert len(flat) == len(set(flat)) == n
    assert split == make_scenario(range(n), scenario, seed)


def test_overlapping_split_rejected():
    with pytest.raises(ValueError):
        TaskSplit(((0, 1), (1, 2)))
    with pytest.raises(ValueError):
        TaskSplit(((0,), ()))


def test_normalize_uses_train_statistics():
    train = _toy(n=9, seed=1)
    test = _toy(n=9, seed=2, split="test")
    ntr, nte, stats = normalize(train, test)
    flat = ntr.windows.reshape(-1, 2).astype(np.float64)
    assert np.allclose(flat.mean(0), 0, atol=1e-6) and np.allclose(flat.std(0), 1, atol=1e-5)
    raw = test.windows.reshape(-1, 2).astype(np.float64)
    assert np.allclose(nte.windows.reshape(-1, 2), (raw - stats.mean) / stats.std, atol=1e-5)


def test_normalize_constant_feature_is_finite():
    train = Dataset(np.ones((4, 2, 1)), np.array([0, 1, 0, 1]), (0, 1))
    ntr, _, stats = normalize(train, train)
    assert np.all(np.isfinite(ntr.windows)) and stats.std[0] == 1e-8


@pytest.mark.parametrize("labels, n, want", [
    ([0] * 90 + [1] * 10, 2, [100 / 180, 100 / 20]),
    ([0, 1, 2, 0, 1, 2], 3, [1, 1, 1]),
    ([1, 1, 2], 4, [0, 0.75, 1.5, 0]),
])
def test_class_weights(labels, n, want):
    w = class_weights(labels, n)
    assert np.allclose(w, want)
    assert np.isclose(w[np.asarray(labels)].mean(), 1.0)


def test_class_weights_ninety_ten():
    w = class_weights([0] * 90 + [1] * 10, 2)
    assert np.isclose(w[1] / w[0], 9.0)


def test_filter_and_relabel():
    ds = _toy(n=9, classes=(3, 5, 8))
    sub = filter_by_classes(ds, [5, 8])
    assert set(sub.labels.tolist()) == {5, 8} and sub.classes == (5, 8)
    mapped = sub.relabel({5: 0, 8: 1})
    assert set(mapped.labels.tolist()) == {0, 1}
    with pytest.raises(ValueError):
        filter_by_classes(ds, [])
    with pytest.raises(ValueError):
        filter_by_classes(ds, [42])


def test_concat_pools_classes():
    a, b = _toy(classes=(0, 1)), _toy(classes=(2,), seed=3)
    both = concat([a, b])
    assert len(both) == 12 and both.classes == (0, 1, 2)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3)), np.zeros(2), (0,))
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 3, 1)), np.zeros(0), (0,))
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3, 1)), np.array([0, 4]), (0, 1))
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3, 1)), np.array([0, 1]), (0, 1), split="val")


def test_build_scenario_remaps_to_arrival_columns():
    train, test = _toy(n=12, classes=(0, 1, 2, 3)), _toy(n=8, classes=(0, 1, 2, 3), split="test")
    split = TaskSplit(((3, 1), (0, 2)))
    scen = build_scenario(train, test, split)
    assert scen.n_tasks == 2
    assert set(scen.train[0].labels.tolist()) == {0, 1}
    assert set(scen.train[1].labels.tolist()) == {2, 3}
    assert scen.task_columns(1) == (2, 3) and scen.classes_through(0) == 2
    # global class 3 arrived first, so it owns column 0
    assert np.array_equal(scen.train[0].windows[scen.train[0].labels == 0], train.windows[train.labels == 3])


def test_synth_is_deterministic_and_splits_disjoint():
    a = synth_generate(SynthSpec(seed=5))
    b = synth_generate(SynthSpec(seed=5))
    for x, y in zip(a, b):
        assert x.windows.tobytes() == y.windows.tobytes() and np.array_equal(x.labels, y.labels)
    train, test = a
    assert train.windows.shape == (600, 16, 6) and test.windows.shape == (200, 16, 6)
    assert np.bincount(train.labels).tolist() == [100] * 6
    assert not np.array_equal(train.windows[:10], test.windows[:10])


def test_synth_spec_validation():
    for kw in (dict(n_classes=1), dict(ar_coef=1.0), dict(n_train=3), dict(separation=-1.0)):
        with pytest.raises(ValueError):
            SynthSpec(**kw)


def _centroid_accuracy(separation, seed):
    train, test = synth_generate(SynthSpec(separation=separation, seed=seed))
    feats_tr, feats_te = train.windows.mean(axis=1), test.windows.mean(axis=1)
    cents = np.stack([feats_tr[train.labels == c].mean(0) for c in range(6)])
    pred = np.argmin(((feats_te[:, None, :] - cents[None]) ** 2).sum(-1), axis=1)
    return float(np.mean(pred == test.labels))


def test_separation_controls_difficulty():
    assert np.mean([_centroid_accuracy(0.0, s) for s in range(3)]) < 0.35
    assert min(_centroid_accuracy(5.0, s) for s in range(3)) >= 0.95


def test_dataset_round_trip(tmp_path):
    ds = _toy(n=5, t=4, d=3, classes=(0, 1, 2, 3))
    save_dataset(ds, tmp_path / "d.dbds")
    back = load_dataset(tmp_path / "d.dbds")
    assert back.windows.tobytes() == ds.windows.tobytes()
    assert np.array_equal(back.labels, ds.labels) and back.classes == (0, 1, 2, 3)
    assert load_dataset(tmp_path / "d.dbds", split="test").split == "test"


def test_dataset_layout(tmp_path):
    ds = _toy(n=2, t=1, d=2, classes=(0, 7))
    save_dataset(ds, tmp_path / "d.dbds")
    blob = (tmp_path / "d.dbds").read_bytes()
    assert struct.unpack_from("<4sIIIII", blob) == (b"DBDS", 1, 2, 1, 2, 8)
    assert np.array_equal(np.frombuffer(blob, "<f4", 4, 24), ds.windows.reshape(-1))
    assert np.frombuffer(blob, "<u2", 2, 40).tolist() == ds.labels.tolist()
    assert len(blob) == 24 + 16 + 4


@pytest.mark.parametrize("mutate, offset", [
    (lambda b: b"XXXX" + b[4:], 0),
    (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], 4),
    (lambda b: b[:30], 30),
    (lambda b: b[:41], 41),
    (lambda b: b + b"\0", 44),
])
def test_dataset_format_errors(tmp_path, mutate, offset):
    save_dataset(_toy(n=2, t=1, d=2, classes=(0, 7)), tmp_path / "d.dbds")
    path = tmp_path / "bad.dbds"
    path.write_bytes(mutate((tmp_path / "d.dbds").read_bytes()))
    with pytest.raises(FormatError) as err:
        load_dataset(path)
    assert err.value.offset == offset


def test_synth_file_hash_is_stable(tmp_path):
    train, _ = synth_generate(SynthSpec(n_train=12, n_test=6, seed=2))
    save_dataset(train, tmp_path / "a.dbds")
    train2, _ = synth_generate(SynthSpec(n_train=12, n_test=6, seed=2))
    save_dataset(train2, tmp_path / "b.dbds")
    digest = [hashlib.sha256((tmp_path / n).read_bytes()).hexdigest() for n in ("a.dbds", "b.dbds")]
    assert digest[0] == digest[1]


def test_csv_import(tmp_path):
    rows = np.array([[1, 2, 3, 4, 0], [5, 6, 7, 8, 2]], dtype=float)
    np.savetxt(tmp_path / "w.csv", rows, delimiter=",")
    ds = load_csv(tmp_path / "w.csv", n_steps=2, n_features=2)
    assert ds.windows.shape == (2, 2, 2) and ds.windows[1, 0].tolist() == [5, 6]
    assert ds.labels.tolist() == [0, 2] and ds.classes == (0, 1, 2)
    with pytest.raises(ValueError):
        load_csv(tmp_path / "w.csv", n_steps=3, n_features=2)


def test_prepare_scenario(synth_pair):
    scen = prepare_scenario(*synth_pair, 3, 0)
    assert scen.n_tasks == 4
    assert sum(len(d) for d in scen.train) == 600
    assert all(set(d.labels.tolist()) == set(scen.task_columns(j)) for j, d in enumerate(scen.train))
