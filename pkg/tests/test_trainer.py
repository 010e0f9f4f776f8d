import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from resset.config import TrainConfig
from resset.data import Dataset, build_sequences, collate, encode_dataset, n_targets
from resset.engine import run_batch
from resset.model import init_params
from resset.trainer import (
    AdamState,
    ModelFileError,
    TrainingError,
    adam_step,
    evaluate_loss,
    forward_events,
    load_model,
    make_folds,
    save_model,
    train_model,
)

from conftest import random_dataset, space_of

SMALL = TrainConfig(embed_dim=4, hidden_dim=4, epochs=2, batch_size=3, dropout=0.5)


# -------------------------------------------------------------------- adam


def test_adam_zero_gradient_leaves_params():
    P = {"w": np.array([0.5, -2.0])}
    adam_step(P, {"w": np.zeros(2)}, AdamState(), TrainConfig())
    assert P["w"].tolist() == [0.5, -2.0]


def test_adam_first_step_moves_by_lr():
    P = {"w": np.zeros(1)}
    adam_step(P, {"w": np.ones(1)}, AdamState(), TrainConfig(lr=0.01))
    assert P["w"][0] == pytest.approx(-0.01, abs=1e-9)


@given(st.floats(-5, 5).filter(lambda g: abs(g) > 1e-6))
def test_adam_identical_gradients_identical_updates(g):
    P = {"a": np.zeros(1), "b": np.zeros(1)}
    state = AdamState()
    for _ in range(3):
        adam_step(P, {"a": np.array([g]), "b": np.array([g])}, state, TrainConfig())
    assert P["a"].tobytes() == P["b"].tobytes()
    assert np.sign(P["a"][0]) == -np.sign(g)


def test_adam_rejects_nan_gradient():
    with pytest.raises(TrainingError):
        adam_step({"w": np.zeros(1)}, {"w": np.array([np.nan])}, AdamState(), TrainConfig())


# ------------------------------------------------------------------- folds


@given(st.integers(2, 60), st.integers(2, 8), st.integers(0, 2**31))
def test_folds_partition_patients(n, k, seed):
    if n < k:
        with pytest.raises(ValueError):
            make_folds([f"p{i}" for i in range(n)], k, seed)
        return
    ids = [f"p{i}" for i in range(n)]
    folds = make_folds(ids, k, seed)
    tests = [set(te) for _, te in folds]
    assert sorted(x for t in tests for x in t) == sorted(ids)
    assert max(map(len, tests)) - min(map(len, tests)) <= 1
    for tr, te in folds:
        assert set(tr).isdisjoint(te) and set(tr) | set(te) == set(ids)
    assert make_folds(ids, k, seed) == folds


def test_folds_reject_duplicates():
    with pytest.raises(ValueError):
        make_folds(["a", "a", "b"], 2, 0)


# ---------------------------------------------------------------- training


def test_zero_epochs_returns_init():
    ds = random_dataset(6)
    a = train_model(ds, cfg=dataclasses.replace(SMALL, epochs=0))
    b = train_model(ds, cfg=dataclasses.replace(SMALL, epochs=0))
    assert a.losses == []
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)


@pytest.mark.parametrize("task", ["readmission", "disease", "treatment"])
def test_training_is_deterministic(task):
    ds = random_dataset(8)
    a = train_model(ds, task, SMALL)
    b = train_model(ds, task, SMALL)
    assert a.losses == b.losses
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)


def test_flat_lstm_training_is_deterministic():
    cfg = dataclasses.replace(SMALL, model="flat-lstm")
    a = train_model(random_dataset(6), cfg=cfg)
    b = train_model(random_dataset(6), cfg=cfg)
    assert a.losses == b.losses


def test_graph_and_fused_backends_train_alike():
    ds = random_dataset(6)
    a = train_model(ds, "disease", dataclasses.replace(SMALL, backend="fused"))
    b = train_model(ds, "disease", dataclasses.replace(SMALL, backend="graph"))
    np.testing.assert_allclose(a.losses, b.losses, rtol=1e-10)
    for k in a.params:
        np.testing.assert_allclose(a.params[k], b.params[k], rtol=1e-8, atol=1e-10)


def test_training_reduces_loss():
    ds = random_dataset(12)
    cfg = dataclasses.replace(SMALL, epochs=30, dropout=0.0, lr=0.02)
    res = train_model(ds, "disease", cfg)
    assert res.losses[-1] < 0.9 * res.losses[0]


def test_only_codes_in_the_batch_move():
    ds = random_dataset(2, n_dx=8, n_tx=6, seed=4)
    cfg = dataclasses.replace(SMALL, dropout=0.0)
    space = ds.space
    P = init_params(cfg, [8, 6], 1, np.random.default_rng(0))
    before = P["embed"].copy()
    enc = encode_dataset(ds)
    seqs = [s for p in enc for s in build_sequences(p, "readmission", space.offset)]
    res = run_batch(P, collate(seqs, space.size, "readmission", 1), cfg)
    adam_step(P, res.grads, AdamState(), cfg)
    present = {c for p in enc for dx, tx in p.visits for c in dx + tx}
    for row in range(space.size):
        moved = not np.array_equal(P["embed"][row], before[row])
        if row not in present:
            assert not moved, row
    assert any(not np.array_equal(P["embed"][r], before[r]) for r in present)


def test_nonfinite_loss_raises():
    ds = random_dataset(4)
    P = init_params(SMALL, [5, 4], 1, np.random.default_rng(0))
    P["head.b"][:] = np.nan
    with pytest.raises(TrainingError):
        train_model(ds, cfg=SMALL, params=P)


def test_rejects_single_visit_patients():
    ds = random_dataset(4, min_visits=1, max_visits=1)
    with pytest.raises(ValueError, match="at least 2 visits"):
        train_model(ds, cfg=SMALL)


def test_eval_loss_ignores_dropout_setting():
    ds = random_dataset(5)
    P = train_model(ds, cfg=SMALL).params
    a = evaluate_loss(P, ds, SMALL)
    b = evaluate_loss(P, ds, dataclasses.replace(SMALL, dropout=0.0))
    assert a == b


# ------------------------------------------------------------- model files


def test_model_file_round_trip(tmp_path):
    ds = random_dataset(6)
    res = train_model(ds, "disease", SMALL)
    f1 = save_model(tmp_path / "a.json", res.params, res.cfg, ds.space)
    m = load_model(f1, space=ds.space)
    f2 = save_model(tmp_path / "b.json", m.params, m.cfg, m.space)
    assert f1.read_bytes() == f2.read_bytes()
    enc = encode_dataset(ds)
    _, out_a, _, _ = forward_events(res.params, res.cfg, ds.space, enc)
    _, out_b, _, _ = forward_events(m.params, m.cfg, m.space, enc)
    for a, b in zip(out_a, out_b):
        assert np.array_equal(np.array(a), np.array(b))


def test_model_file_vocab_checks(tmp_path):
    ds = random_dataset(4)
    res = train_model(ds, cfg=dataclasses.replace(SMALL, epochs=0))
    f = save_model(tmp_path / "m.json", res.params, res.cfg, ds.space)
    with pytest.raises(ModelFileError, match="vocabulary mismatch"):
        load_model(f, space=space_of(6, 4))
    doc = json.loads(f.read_text())
    doc["vocab"]["disease"]["codes"][0] = "ZZZ"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(ModelFileError, match="hash"):
        load_model(bad)
    (tmp_path / "junk.json").write_text("{}")
    with pytest.raises(ModelFileError):
        load_model(tmp_path / "junk.json")
