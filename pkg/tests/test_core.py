import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ccreid.core import (ClothesSource, LabeledEmbedding, Role, SampleRecord, Split, avg_pool,
                         l2_normalize, l2_normalize_rows, make_rng, sq_euclidean, stack_embeddings)
from ccreid.errors import ShapeMismatchError, ZeroVectorError

from oracles import avg_pool_loop

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)
    np.testing.assert_array_equal(l2_normalize([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0])
    with pytest.raises(ZeroVectorError):
        l2_normalize([0.0, 0.0])


def test_l2_normalize_rejects_tiny_norm():
    with pytest.raises(ZeroVectorError):
        l2_normalize([1e-13, 0.0])
    with pytest.raises(ZeroVectorError):
        l2_normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))


@given(arrays(np.float64, st.integers(1, 8), elements=finite))
def test_l2_normalize_unit_and_idempotent(v):
    if np.linalg.norm(v) < 1e-6:
        return
    u = l2_normalize(v)
    assert abs(np.linalg.norm(u) - 1.0) < 1e-9
    np.testing.assert_allclose(l2_normalize(u), u, atol=1e-9)
    # direction preserved
    assert np.dot(u, v) > 0


def test_avg_pool_examples():
    np.testing.assert_array_equal(avg_pool(np.array([[[5.0, -2.0]]])), [5.0, -2.0])
    np.testing.assert_array_equal(avg_pool(np.array([[[1.0]], [[3.0]]])), [2.0])
    A = np.random.default_rng(0).standard_normal((4, 4, 8))
    np.testing.assert_allclose(avg_pool(A), avg_pool_loop(A), atol=1e-12)


def test_avg_pool_rejects_bad_maps():
    with pytest.raises(ShapeMismatchError):
        avg_pool(np.zeros((2, 2)))
    with pytest.raises(ShapeMismatchError):
        avg_pool(np.zeros((0, 2, 3)))
    with pytest.raises(ValueError):
        avg_pool(np.full((1, 1, 2), np.nan))


@settings(max_examples=50)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), finite, finite, st.integers(0, 2**31))
def test_avg_pool_linear(H, W, D, a, b, seed):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((2, H, W, D))
    np.testing.assert_allclose(avg_pool(a * A + b * B), a * avg_pool(A) + b * avg_pool(B),
                               atol=1e-10 * (1 + abs(a) + abs(b)))


def test_sq_euclidean_matches_loops():
    rng = np.random.default_rng(1)
    X, Y = rng.standard_normal((5, 3)), rng.standard_normal((7, 3))
    expected = [[sum((x - y) ** 2) for y in Y] for x in X]
    np.testing.assert_allclose(sq_euclidean(X, Y), expected, atol=1e-12)
    with pytest.raises(ShapeMismatchError):
        sq_euclidean(X, rng.standard_normal((2, 4)))


def test_sample_record_role_invariant():
    r = SampleRecord("s1", "p1", "c0")
    assert r.split is None and r.role is None
    q = r.with_role(Role.QUERY)
    assert q.clothes_source is ClothesSource.TEMPLATE
    g = r.with_role(Role.GALLERY)
    assert g.clothes_source is ClothesSource.DETECTED_PATCH
    assert r.with_split(Split.TEST).split is Split.TEST
    with pytest.raises(ValueError):
        SampleRecord("s2", "p1", "c0", role=Role.QUERY, clothes_source=ClothesSource.DETECTED_PATCH)
    with pytest.raises(ValueError):
        SampleRecord("s3", "p1", "c0", role=Role.GALLERY, clothes_source=ClothesSource.TEMPLATE)


def test_stack_embeddings_checks_dims():
    r = SampleRecord("s", "p", "c")
    X = stack_embeddings([LabeledEmbedding(r, np.ones(3)), LabeledEmbedding(r, np.zeros(3))])
    assert X.shape == (2, 3)
    with pytest.raises(ShapeMismatchError):
        stack_embeddings([LabeledEmbedding(r, np.ones(3)), LabeledEmbedding(r, np.ones(2))])
    with pytest.raises(ShapeMismatchError):
        stack_embeddings([])


def test_make_rng_streams_are_reproducible_and_distinct():
    a = make_rng(7, "stage", 3).standard_normal(4)
    b = make_rng(7, "stage", 3).standard_normal(4)
    c = make_rng(7, "stage", 4).standard_normal(4)
    d = make_rng(8, "stage", 3).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)
