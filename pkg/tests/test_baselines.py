import numpy as np
import pytest
from hypothesis import given, strategies as st

from resset.baselines import (
    DivergenceError,
    bow_events,
    bow_features,
    flat_lstm,
    flat_tokens,
    logreg_loss,
    train_logreg,
)
from resset.config import TrainConfig
from resset.data import EncodedPatient, build_sequences, collate, encode_dataset
from resset.diffcore import constant
from resset.engine import run_batch
from resset.heads import head_logits
from resset.model import as_nodes, head_of, init_params, lstm_of
from resset.recurrent import LstmState, lstm_step

from conftest import random_dataset

# -------------------------------------------------------------- features


def test_bow_feature_examples():
    assert bow_features([((0, 2), (5,)), ((2,), ())], 6).tolist() == [1, 0, 2, 0, 0, 1]
    assert bow_features([], 3).tolist() == [0, 0, 0]


def test_bow_events_treatment_rows_withhold_current_treatments():
    p = EncodedPatient("p", [((0,), (3,)), ((1,), (4,))], 1)
    X, targets, owners = bow_events([p], "treatment", 5, 3)
    assert X.tolist() == [[1, 0, 0, 0, 0], [1, 1, 0, 1, 0]]
    assert targets == [(0,), (1,)] and owners == ["p", "p"]
    X, targets, _ = bow_events([p], "readmission", 5, 3)
    assert X.tolist() == [[1, 1, 0, 1, 1]] and targets == [1]


# ---------------------------------------------------------- linear model


def test_separable_data_is_fit_exactly():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(80, 3))
    score = X[:, 0] - 0.5 * X[:, 2]
    X, score = X[np.abs(score) > 0.3], score[np.abs(score) > 0.3]  # leave a margin
    y = (score > 0).astype(int)
    m = train_logreg(X, y, l2=1e-4)
    assert np.all((m.predict(X) > 0.5) == y)


def test_heavy_l2_gives_base_rate():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 4))
    y = np.array([1] * 10 + [0] * 30)
    m = train_logreg(X, y, l2=1e6)
    assert np.max(np.abs(m.W)) < 1e-5
    np.testing.assert_allclose(m.predict(X), 0.25, atol=1e-5)


def test_softmax_model_reaches_stationary_point():
    rng = np.random.default_rng(2)
    X = rng.poisson(1.0, size=(50, 6)).astype(float)
    targets = [tuple(sorted({int(a), int(b)})) for a, b in rng.integers(0, 4, size=(50, 2))]
    m = train_logreg(X, targets, l2=1e-2, task="disease", n_out=4, tol=1e-8)
    assert m.grad_norm < 1e-8
    assert np.allclose(m.predict(X).sum(axis=1), 1.0)


@given(st.integers(0, 2**31), st.floats(0, 1))
def test_objective_is_convex(seed, lam):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(10, 3))
    y = rng.integers(0, 2, 10)
    W1, W2 = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
    b1, b2 = rng.normal(size=1), rng.normal(size=1)
    f = lambda W, b: logreg_loss(W, b, X, y, "readmission", 0.1)  # noqa: E731
    mid = f(lam * W1 + (1 - lam) * W2, lam * b1 + (1 - lam) * b2)
    assert mid <= lam * f(W1, b1) + (1 - lam) * f(W2, b2) + 1e-12


def test_fixed_learning_rate_divergence_is_reported():
    X = np.array([[10.0], [10.0], [10.0]])
    with pytest.raises(DivergenceError, match="lower the learning rate"):
        train_logreg(X, [1, 1, 0], l2=0.0, lr=10.0)
    m = train_logreg(X, [1, 1, 0], l2=0.0, lr=0.01)
    assert m.predict(X)[0] == pytest.approx(2 / 3, abs=1e-4)


def test_logreg_input_errors():
    with pytest.raises(ValueError):
        train_logreg(np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        train_logreg(np.zeros((2, 2)), [[], [1]], task="disease", n_out=2)


# -------------------------------------------------------------- flat lstm


CFG = TrainConfig(model="flat-lstm", embed_dim=4, hidden_dim=3, dropout=0.0)


def _params(n_out=1, seed=0):
    P = init_params(CFG, [5, 4], n_out, np.random.default_rng(seed))
    P["embed"] = P["embed"] + np.random.default_rng(seed + 1).normal(0, 0.5, P["embed"].shape)
    return P


def test_single_code_is_one_lstm_step():
    P = as_nodes(_params(), requires_grad=False)
    p = EncodedPatient("p", [((2,), ())], 0)
    out = flat_lstm(p, P, CFG)
    v = constant(np.maximum(P["embed"].data[2], 0.0))
    step = lstm_step(lstm_of(P), v, LstmState.zeros(3))
    assert out.data.tolist() == step.h.data.tolist()


def test_token_order_and_cap():
    visits = [((3, 1), (7,)), ((0,), (5, 6))]
    assert flat_tokens(visits, 100) == [1, 3, 7, 0, 5, 6]
    assert flat_tokens(visits, 2) == [5, 6]
    long = [(tuple(range(30)), tuple(range(30, 60)))] * 3
    assert len(flat_tokens(long, 100)) == 100
    shuffled = flat_tokens(visits, 100, np.random.default_rng(0))
    assert sorted(shuffled[:3]) == [1, 3, 7] and sorted(shuffled[3:]) == [0, 5, 6]


def test_eval_path_does_not_depend_on_rng():
    P = _params()
    ds = random_dataset(4)
    enc = encode_dataset(ds)
    seqs = [s for p in enc for s in build_sequences(p, "readmission", ds.space.offset, tokens=True)]
    batch = collate(seqs, ds.space.size, "readmission", 1, tokens=True)
    a = run_batch(P, batch, CFG, need_grad=False).outputs
    b = run_batch(P, batch, CFG, need_grad=False).outputs
    assert a.tobytes() == b.tobytes()


def test_flat_lstm_graph_matches_engine():
    P = _params()
    nodes = as_nodes(P, requires_grad=False)
    ds = random_dataset(5)
    enc = encode_dataset(ds)
    seqs = [s for p in enc for s in build_sequences(p, "readmission", ds.space.offset, tokens=True)]
    fused = run_batch(P, collate(seqs, ds.space.size, "readmission", 1, tokens=True), CFG,
                      need_grad=False).outputs
    graph = [1.0 / (1.0 + np.exp(-head_logits(flat_lstm(p, nodes, CFG), head_of(nodes)).data[0]))
             for p in enc]
    np.testing.assert_allclose(fused, graph, rtol=1e-12)
