import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccreid.association import (AssociationConfig, ClusterSet, DisjointSet, anchor_knn, associate,
                                cluster_associate, merge_links, oracle_verify, pairwise_f1)
from ccreid.dataset import SynthConfig, synth_generate
from ccreid.errors import DanglingLinkError, InvalidConfigError, KTooLargeError

from oracles import knn_brute, pair_f1_brute, single_link_brute


def _same_partition(a, b):
    a, b = list(a), list(b)
    return all((a[i] == a[j]) == (b[i] == b[j]) for i, j in itertools.combinations(range(len(a)), 2))


def test_disjoint_set_smallest_representative():
    ds = DisjointSet(5)
    ds.union(3, 4)
    ds.union(4, 1)
    assert ds.find(3) == 1 and ds.size[1] == 3
    np.testing.assert_array_equal(ds.labels(), [0, 1, 2, 1, 1])


def test_config_validation():
    assert AssociationConfig().validate().k == 10
    with pytest.raises(InvalidConfigError):
        AssociationConfig(threshold=-1).validate()
    with pytest.raises(InvalidConfigError):
        AssociationConfig(error_rate=2).validate()


def test_cluster_examples():
    X = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]])
    cs = cluster_associate(X, 1.0)
    np.testing.assert_array_equal(cs.labels, [0, 0, 1, 1])
    assert cs.n_clusters == 2 and list(cs.anchors) == [0, 2]
    np.testing.assert_array_equal(cluster_associate(X, 0.0).labels, [0, 1, 2, 3])
    # strict threshold: a pair exactly at the threshold stays apart
    assert cluster_associate(np.array([[0.0], [1.0]]), 1.0).n_clusters == 2


def test_medoid_anchor():
    X = np.array([[0.0], [0.4], [0.5], [0.9]])
    cs = cluster_associate(X, 0.5)
    assert cs.n_clusters == 1 and cs.anchors[0] == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.floats(0, 2), st.integers(0, 2**31))
def test_cluster_matches_bfs_oracle(n, threshold, seed):
    X = np.random.default_rng(seed).standard_normal((n, 2))
    cs = cluster_associate(X, threshold)
    assert _same_partition(cs.labels, single_link_brute(X, threshold))
    for c in range(cs.n_clusters):
        assert cs.labels[cs.anchors[c]] == c


def test_noiseless_clusters_are_clothes_groups():
    data = synth_generate(SynthConfig(biometric_noise=0.0, occlusion_rate=0.0))
    X = data.person_maps.mean(axis=(1, 2))
    cs = cluster_associate(X, AssociationConfig().threshold)
    assert _same_partition(cs.labels, [r.group_key for r in data.records])


def test_knn_examples():
    A = np.array([[0.0], [1.0], [3.0]])
    assert anchor_knn(A, 1) == [(0, 1), (1, 0), (2, 1)]
    full = anchor_knn(A, 2)
    assert sorted(full) == [(i, j) for i in range(3) for j in range(3) if i != j]
    assert anchor_knn(A, 0) == []
    with pytest.raises(KTooLargeError):
        anchor_knn(A, 3)


def test_knn_matches_sort_oracle():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((50, 4))
    assert anchor_knn(A, 5) == knn_brute(A, 5)
    # ties by index
    B = rng.integers(0, 3, (20, 2)).astype(float)
    assert anchor_knn(B, 4) == knn_brute(B, 4)


def _clusters(labels):
    labels = np.asarray(labels)
    anchors = [int(np.flatnonzero(labels == c)[0]) for c in range(labels.max() + 1)]
    return ClusterSet(labels, np.array(anchors))


def test_merge_examples():
    cs = _clusters([0, 0, 1, 2, 2, 3])
    np.testing.assert_array_equal(merge_links(cs, []), [0, 0, 1, 2, 2, 3])
    np.testing.assert_array_equal(merge_links(cs, [(0, 1), (1, 2)]), [0, 0, 0, 0, 0, 1])
    with pytest.raises(DanglingLinkError):
        merge_links(cs, [(0, 4)])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_merge_invariant_to_link_order(seed):
    rng = np.random.default_rng(seed)
    cs = _clusters(np.arange(8).repeat(2))
    links = [tuple(rng.integers(0, 8, 2)) for _ in range(int(rng.integers(0, 10)))]
    base = merge_links(cs, links)
    shuffled = [links[i][::-1] for i in rng.permutation(len(links))]
    np.testing.assert_array_equal(merge_links(cs, shuffled), base)


def test_oracle_verify():
    links = [(0, 1), (0, 2), (1, 2)]
    truth = ["a", "a", "b"]
    assert oracle_verify(links, truth) == [(0, 1)]
    assert oracle_verify(links, truth, error_rate=1.0) == [(0, 2), (1, 2)]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 25), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_pairwise_f1_matches_brute_force(n, kp, kt, seed):
    rng = np.random.default_rng(seed)
    pred, truth = rng.integers(0, kp, n), rng.integers(0, kt, n)
    assert abs(pairwise_f1(pred, truth) - pair_f1_brute(pred, truth)) < 1e-12
    assert pairwise_f1(truth, truth) == 1.0


def _run(sigma_b, seed=0):
    data = synth_generate(SynthConfig(biometric_noise=sigma_b, seed=seed))
    cfg = AssociationConfig()
    truth = [r.person_id for r in data.records]
    return associate(data.person_maps.mean(axis=(1, 2)), data.face, cfg.threshold, cfg.k, truth=truth), truth


def test_noiseless_association_is_exact():
    result, truth = _run(0.0)
    assert _same_partition(result.identities, truth)
    assert result.f1 == 1.0


def test_default_noise_association_f1():
    result, _ = _run(SynthConfig().biometric_noise)
    assert result.f1 >= 0.9
    assert all(a != b for a, b in result.links)
