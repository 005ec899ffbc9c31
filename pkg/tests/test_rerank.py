import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccreid.errors import InvalidConfigError, NonFiniteDistanceError, ShapeMismatchError
from ccreid.rerank import RerankConfig, kreciprocal_rerank

from oracles import rerank_sets


def _dist(A, B):
    return np.sqrt(((A[:, None] - B[None]) ** 2).sum(-1))


def _instance(seed, nq, ng, dim=3):
    rng = np.random.default_rng(seed)
    Q, G = rng.standard_normal((nq, dim)), rng.standard_normal((ng, dim))
    return _dist(Q, G), _dist(Q, Q), _dist(G, G)


def test_config_defaults_and_validation():
    assert RerankConfig() == RerankConfig(20, 6, 0.3)
    with pytest.raises(InvalidConfigError):
        RerankConfig(k1=3, k2=4)
    with pytest.raises(InvalidConfigError):
        RerankConfig(lam=1.5)
    with pytest.raises(InvalidConfigError):
        RerankConfig(k2=0)


def test_lambda_one_is_identity():
    qg, qq, gg = _instance(0, 4, 9)
    out = kreciprocal_rerank(qg, qq, gg, RerankConfig(5, 2, 1.0))
    np.testing.assert_array_equal(out, qg)
    out, _ = kreciprocal_rerank(qg, qq, gg, RerankConfig(5, 2, 1.0), return_jaccard=True)
    np.testing.assert_array_equal(out, qg)


def test_one_query_two_gallery():
    qg = np.array([[0.2, 0.7]])
    qq = np.zeros((1, 1))
    gg = np.array([[0.0, 0.6], [0.6, 0.0]])
    for k1, k2 in [(1, 1), (2, 1), (2, 2)]:
        out = kreciprocal_rerank(qg, qq, gg, RerankConfig(k1, k2, 0.3))
        np.testing.assert_allclose(out, rerank_sets(qg, qq, gg, k1, k2, 0.3), atol=1e-10)


def test_shared_neighbours_flip_top1():
    # the distractor is nearer in raw distance; the true match shares the
    # probe's neighbourhood of other queries
    Q = np.array([[0.0, 0.0], [0.5, 0.3], [0.5, -0.3], [0.4, 0.0], [0.6, 0.1]])
    G = np.array([[1.0, 0.0], [-0.9, 0.0], [-1.8, 0.1], [-1.8, -0.1], [-2.0, 0.0], [-1.6, 0.0]])
    qg, qq, gg = _dist(Q, G), _dist(Q, Q), _dist(G, G)
    assert np.argmin(qg[0]) == 1
    out = kreciprocal_rerank(qg, qq, gg, RerankConfig(4, 1, 0.3))
    np.testing.assert_allclose(out, rerank_sets(qg, qq, gg, 4, 1, 0.3), atol=1e-10)
    assert np.argmin(out[0]) == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 15), st.integers(1, 10), st.integers(1, 10),
       st.floats(0, 1), st.integers(0, 2**31))
def test_matches_set_oracle(nq, ng, k1, k2, lam, seed):
    k2 = min(k1, k2)
    qg, qq, gg = _instance(seed, nq, ng)
    out = kreciprocal_rerank(qg, qq, gg, RerankConfig(k1, k2, lam))
    np.testing.assert_allclose(out, rerank_sets(qg, qq, gg, k1, k2, lam), atol=1e-10, rtol=0)


def test_ties_break_by_lower_index():
    # integer distances with many exact ties
    rng = np.random.default_rng(4)
    P = rng.integers(0, 3, (12, 2)).astype(float)
    D = np.abs(P[:, None] - P[None]).sum(-1)
    qg, qq, gg = D[:4, 4:], D[:4, :4], D[4:, 4:]
    out = kreciprocal_rerank(qg, qq, gg, RerankConfig(4, 2, 0.3))
    np.testing.assert_allclose(out, rerank_sets(qg, qq, gg, 4, 2, 0.3), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(2, 12), st.integers(0, 2**31))
def test_jaccard_and_output_bounds(nq, ng, seed):
    qg, qq, gg = _instance(seed, nq, ng)
    cfg = RerankConfig(4, 2, 0.3)
    out, jac = kreciprocal_rerank(qg, qq, gg, cfg, return_jaccard=True)
    assert np.all(jac >= 0) and np.all(jac <= 1)
    assert np.all(out >= cfg.lam * qg - 1e-15) and np.all(out <= cfg.lam * qg + (1 - cfg.lam) + 1e-15)


def test_gallery_permutation_round_trip():
    qg, qq, gg = _instance(5, 6, 20)
    cfg = RerankConfig(6, 3, 0.3)
    base = kreciprocal_rerank(qg, qq, gg, cfg)
    np.testing.assert_array_equal(base, kreciprocal_rerank(qg, qq, gg, cfg))
    perm = np.random.default_rng(6).permutation(20)
    moved = kreciprocal_rerank(qg[:, perm], qq, gg[np.ix_(perm, perm)], cfg)
    back = np.empty_like(moved)
    back[:, perm] = moved
    # sums over the permuted axis may associate differently
    np.testing.assert_allclose(back, base, rtol=0, atol=1e-14)


def test_input_validation():
    qg, qq, gg = _instance(7, 2, 3)
    with pytest.raises(ShapeMismatchError):
        kreciprocal_rerank(qg, qq, gg[:2, :2])
    bad = qg.copy()
    bad[0, 0] = np.inf
    with pytest.raises(NonFiniteDistanceError):
        kreciprocal_rerank(bad, qq, gg)
    with pytest.raises(ValueError):
        kreciprocal_rerank(-qg, qq, gg)
