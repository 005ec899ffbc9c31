import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccreid.core import LabeledEmbedding, SampleRecord
from ccreid.errors import (EmptyTripletSetError, InvalidConfigError, LabelOutOfRangeError,
                           NoValidAnchorError)
from ccreid.losses import (LossConfig, Triplet, batch_hard_mine, batch_hard_mine_array,
                           batch_hard_mine_distances, batch_hard_triplet_loss, combined_loss, id_loss,
                           triplet_loss)

from gradcheck import stable_batch
from oracles import batch_hard_brute, central_diff, rel_err


def test_id_loss_uniform_point():
    for L in (2, 5, 17):
        loss, _ = id_loss(np.zeros((3, 4)), [0, 1, 1], np.random.default_rng(L).standard_normal((L, 4)))
        assert abs(loss - math.log(L)) < 1e-12
    loss, _ = id_loss(np.zeros((1, 2)), [0], np.eye(2))
    assert abs(loss - 0.6931) < 1e-4


def test_id_loss_hand_value():
    # w_1 = (1, 0), w_2 = (0, 1), f = (1, 0), label is the first class
    loss, _ = id_loss([[1.0, 0.0]], [0], np.eye(2))
    assert abs(loss - math.log(1 + math.exp(-1))) < 1e-12
    assert abs(loss - 0.31326) < 1e-5


def test_id_loss_batch_is_mean():
    rng = np.random.default_rng(0)
    F, Wc = rng.standard_normal((2, 3)), rng.standard_normal((4, 3))
    both, _ = id_loss(F, [1, 3], Wc)
    a, _ = id_loss(F[:1], [1], Wc)
    b, _ = id_loss(F[1:], [3], Wc)
    assert abs(both - (a + b) / 2) < 1e-14


def test_id_loss_label_range():
    with pytest.raises(LabelOutOfRangeError):
        id_loss(np.zeros((1, 2)), [2], np.eye(2))
    with pytest.raises(LabelOutOfRangeError):
        id_loss(np.zeros((1, 2)), [-1], np.eye(2))


def test_id_loss_gradients():
    rng = np.random.default_rng(1)
    for _ in range(20):
        F, Wc = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
        y = rng.integers(0, 5, 4)
        _, g = id_loss(F, y, Wc)
        assert rel_err(g["features"], central_diff(lambda x: id_loss(x, y, Wc)[0], F)) < 1e-4
        assert rel_err(g["weights"], central_diff(lambda w: id_loss(F, y, w)[0], Wc)) < 1e-4


def test_triplet_loss_hinge_cases():
    D = np.zeros((3, 3))
    D[0, 1], D[0, 2] = 0.5, 0.6
    loss, _ = triplet_loss(D, [Triplet(0, 1, 2)])
    assert abs(loss - 0.2) < 1e-15
    D[0, 1], D[0, 2] = 0.0, 0.3
    assert triplet_loss(D, [Triplet(0, 1, 2)])[0] == 0.0
    D[0, 1] = D[0, 2] = 0.9
    assert triplet_loss(D, [Triplet(0, 1, 2)])[0] == pytest.approx(0.3, abs=1e-15)


def test_triplet_loss_empty():
    with pytest.raises(EmptyTripletSetError):
        triplet_loss(np.zeros((2, 2)), [])


def test_triplet_inactive_hinge_has_no_gradient():
    D = np.array([[0, 0.1, 2.0], [0.1, 0, 1], [2.0, 1, 0]])
    loss, g = triplet_loss(D, [Triplet(0, 1, 2)])
    assert loss == 0.0 and not np.any(g["distances"])


@settings(max_examples=50)
@given(st.integers(0, 2**31), st.floats(-5, 5))
def test_triplet_loss_shift_invariant(seed, c):
    rng = np.random.default_rng(seed)
    D = rng.uniform(0, 2, (6, 6))
    T = [Triplet(*rng.choice(6, 3, replace=False)) for _ in range(4)]
    assert triplet_loss(D + c, T)[0] == pytest.approx(triplet_loss(D, T)[0], abs=1e-12)


def test_loss_config_validation():
    assert LossConfig().margin == 0.3 and LossConfig().alpha == 1.0
    with pytest.raises(InvalidConfigError):
        LossConfig(margin=-0.1)
    with pytest.raises(InvalidConfigError):
        LossConfig(alpha=float("nan"))


def _labeled(X, labels):
    return [LabeledEmbedding(SampleRecord(f"s{i}", str(l), "c"), x) for i, (x, l) in enumerate(zip(X, labels))]


def test_mining_hand_distances():
    # 2 ids x 2 samples; distances chosen by hand
    D = np.array([[0, 1, 3, 2],
                  [1, 0, 4, 5],
                  [3, 4, 0, 1],
                  [2, 5, 1, 0]], dtype=float)
    labels = [0, 0, 1, 1]
    assert batch_hard_mine_distances(D, labels) == [(0, 1, 3), (1, 0, 2), (2, 3, 0), (3, 2, 0)]
    assert batch_hard_mine_distances(D, labels) == batch_hard_brute(D, labels)


def test_mining_singleton_and_single_identity():
    X = np.array([[0.0], [1.0], [5.0]])
    triplets = batch_hard_mine_array(X, [0, 0, 1])
    assert [t.anchor for t in triplets] == [0, 1]
    with pytest.raises(NoValidAnchorError):
        batch_hard_mine_array(X, [0, 0, 0])


def test_mining_labeled_embeddings_uses_person_id():
    X = np.array([[0.0], [0.1], [3.0], [3.2]])
    out = batch_hard_mine(_labeled(X, ["a", "a", "b", "b"]))
    assert out == [(0, 1, 2), (1, 0, 2), (2, 3, 1), (3, 2, 1)]


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 32), st.integers(1, 6), st.integers(0, 2**31), st.booleans())
def test_mining_matches_brute_force(B, n_ids, seed, integer_dists):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_ids, B)
    if integer_dists:  # many exact ties
        D = rng.integers(0, 4, (B, B)).astype(float)
        D = D + D.T
    else:
        X = rng.standard_normal((B, 3))
        D = ((X[:, None] - X[None]) ** 2).sum(-1)
    try:
        got = batch_hard_mine_distances(D, labels)
    except NoValidAnchorError:
        got = []
    assert [tuple(t) for t in got] == batch_hard_brute(D, labels)


def test_batch_hard_triplet_gradient():
    rng = np.random.default_rng(3)
    for _ in range(25):
        X, labels = stable_batch(rng)
        _, g, _ = batch_hard_triplet_loss(X, labels)
        fd = central_diff(lambda x: batch_hard_triplet_loss(x, labels)[0], X)
        assert rel_err(g, fd) < 1e-4


def test_combined_loss_terms():
    rng = np.random.default_rng(4)
    F = rng.standard_normal((4, 3))
    F /= np.linalg.norm(F, axis=1, keepdims=True)
    FB = rng.standard_normal((4, 2))
    labels = np.array([0, 0, 1, 1])
    Wf, Wb = rng.standard_normal((2, 3)), rng.standard_normal((2, 2))
    total, g = combined_loss(F, FB, labels, Wf, Wb, LossConfig(alpha=0, aux_weight=0))
    assert total == id_loss(F, labels, Wf)[0]
    assert not np.any(g["biometric"])

    total, _ = combined_loss(F, FB, labels, Wf, Wb, LossConfig(alpha=1, aux_weight=1))
    D = ((F[:, None] - F[None]) ** 2).sum(-1)
    tri = np.mean([max(0.0, D[a, p] + 0.3 - D[a, n]) for a, p, n in batch_hard_brute(D, labels)])
    expected = id_loss(F, labels, Wf)[0] + tri + id_loss(FB, labels, Wb)[0]
    assert abs(total - expected) < 1e-12


def test_combined_loss_perfect_margin_batch():
    F = np.array([[1.0, 0.0], [0.999, 0.0447], [-1.0, 0.0], [-0.999, -0.0447]])
    _, g = combined_loss(F, F, [0, 0, 1, 1], np.eye(2), np.eye(2))
    assert g["terms"]["triplet"] == 0.0


def test_combined_loss_gradients():
    rng = np.random.default_rng(5)
    for _ in range(25):
        F, labels = stable_batch(rng)
        FB = rng.standard_normal((len(F), 3))
        Wf, Wb = rng.standard_normal((3, F.shape[1])), rng.standard_normal((3, 3))
        cfg = LossConfig(alpha=0.7, aux_weight=1.3)
        _, g = combined_loss(F, FB, labels, Wf, Wb, cfg)
        checks = [
            (g["fused"], lambda x: combined_loss(x, FB, labels, Wf, Wb, cfg)[0], F),
            (g["biometric"], lambda x: combined_loss(F, x, labels, Wf, Wb, cfg)[0], FB),
            (g["params_f"], lambda x: combined_loss(F, FB, labels, x, Wb, cfg)[0], Wf),
            (g["params_fb"], lambda x: combined_loss(F, FB, labels, Wf, x, cfg)[0], Wb),
        ]
        for analytic, fn, x in checks:
            assert rel_err(analytic, central_diff(fn, x)) < 1e-4


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((6, 3))
    labels = rng.integers(0, 3, 6)
    labels[:2] = [0, 1]
    labels[2] = 0
    total, g = combined_loss(F, F, labels, rng.standard_normal((3, 3)), rng.standard_normal((3, 3)))
    assert total >= 0 and all(v >= 0 for v in g["terms"].values())
