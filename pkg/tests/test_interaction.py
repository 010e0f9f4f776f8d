import numpy as np
import pytest
from hypothesis import given, strategies as st

from resset.diffcore import Node, constant, grad_check, op_elementwise, op_reduce
from resset.interaction import MODES, check_mode, interact, interact_batch, rho
from resset.setfn import canonical_ids, encode_ids

N_DX, N_TX, DIM = 12, 10, 6


@pytest.fixture(scope="module")
def table():
    return np.random.default_rng(5).standard_normal((N_DX + N_TX, DIM))


def test_rho_examples():
    assert rho(np.array([1.0, -1.0])).tolist() == [4.0, 0.0]
    assert rho(np.array([0.0, 0.0])).tolist() == [1.0, 1.0]


def test_subtractive_identical_encodings_give_all_ones():
    # a disease and a treatment that embed to the same vector cancel exactly
    table = Node(np.array([[0.3, -0.2, 0.9], [0.3, -0.2, 0.9]]))
    assert interact("subtractive", [0], [1], table).data.tolist() == [1.0, 1.0, 1.0]


def test_subtractive_unit_vectors():
    table = Node(np.array([[1.0, 0.0], [0.0, 1.0]]))
    out = interact("subtractive", [0], [1], table).data
    np.testing.assert_allclose(out, [4.0, 0.0], atol=1e-5)


def test_multiplicative_disjoint_support():
    table = Node(np.array([[0.5, 0.0], [0.0, 0.5]]))
    assert interact("multiplicative", [0], [1], table).data.tolist() == [1.0, 1.0]


def test_unknown_mode():
    with pytest.raises(ValueError):
        check_mode("bilinear")
    with pytest.raises(ValueError):
        interact("bilinear", [0], [1], Node(np.eye(2)))


def test_empty_treatment_substitution(table):
    t = Node(table)
    d = encode_ids(t, [0, 3]).data
    assert interact("subtractive", [0, 3], [], t).data.tolist() == rho(d).tolist()
    assert interact("additive", [0, 3], [], t).data.tolist() == rho(d).tolist()
    assert interact("multiplicative", [0, 3], [], t).data.tolist() == [1.0] * DIM
    assert interact("implicit", [0, 3], [], t).data.tolist() == rho(d).tolist()


bag_dx = st.lists(st.integers(0, N_DX - 1), max_size=5, unique=True)
bag_tx = st.lists(st.integers(N_DX, N_DX + N_TX - 1), max_size=5, unique=True)


@given(st.sampled_from(MODES), bag_dx, bag_tx, st.randoms(use_true_random=False))
def test_permutation_invariant_in_both_bags(table, mode, dx, tx, rnd):
    t = Node(table)
    a = interact(mode, dx, tx, t).data
    dx2, tx2 = list(dx), list(tx)
    rnd.shuffle(dx2)
    rnd.shuffle(tx2)
    assert interact(mode, dx2, tx2, t).data.tobytes() == a.tobytes()


@given(st.sampled_from(MODES), bag_dx, bag_tx)
def test_outputs_nonnegative_and_bounded(table, mode, dx, tx):
    out = interact(mode, dx, tx, Node(table)).data
    assert np.all(out >= 0.0)
    assert np.all(out < 9.0)


@given(st.sampled_from(MODES), st.lists(st.tuples(bag_dx, bag_tx), min_size=1, max_size=5))
def test_batched_matches_graph(table, mode, visits):
    pad = N_DX + N_TX
    ext = np.vstack([table, np.zeros((1, DIM))])
    kd = max(1, max(len(d) for d, _ in visits))
    kt = max(1, max(len(t) for _, t in visits))
    di = np.full((len(visits), kd), pad)
    ti = np.full((len(visits), kt), pad)
    for r, (d, t) in enumerate(visits):
        di[r, : len(d)] = canonical_ids(d)
        ti[r, : len(t)] = canonical_ids(t)
    out, _ = interact_batch(mode, ext, di, ti, 1e-6)
    for r, (d, t) in enumerate(visits):
        np.testing.assert_allclose(out[r], interact(mode, d, t, Node(table)).data, rtol=0, atol=1e-14)


@pytest.mark.parametrize("mode", MODES)
def test_gradient_matches_finite_differences(mode):
    rng = np.random.default_rng(11)
    table = rng.standard_normal((5, 3)) + 0.5
    w = constant([0.7, -0.4, 1.3])
    rep = grad_check(lambda p: op_reduce("sum", op_elementwise("mul", interact(mode, [0, 1], [3, 4], p["t"]), w)),
                     {"t": table})
    assert rep.kink_margin > 1e-3
    assert rep.max_rel_error < 1e-4, rep
