"""Associating unlabeled person images into identities.

Pipeline: cluster re-id features (single link), pick a medoid anchor per
cluster, link each anchor to its nearest anchors by face descriptor, let an
annotator keep the true links, and merge linked clusters with union-find.
The annotator is simulated from ground truth with an optional error rate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Optional, Sequence

import numpy as np

from .core import make_rng, sq_euclidean
from .errors import DanglingLinkError, InvalidConfigError, KTooLargeError, ShapeMismatchError


@dataclass(frozen=True)
class AssociationConfig:
    threshold: float = 2.5
    k: int = 10
    error_rate: float = 0.0

    def validate(self):
        if not (np.isfinite(self.threshold) and self.threshold >= 0):
            raise InvalidConfigError("threshold must be a nonnegative real")
        if self.k < 0:
            raise InvalidConfigError("k must be nonnegative")
        if not 0 <= self.error_rate <= 1:
            raise InvalidConfigError("error_rate must lie in [0, 1]")
        return self


class DisjointSet:
    """Union-find over ``0..n-1`` with path halving and union by size.

    The representative of a merged set is its smallest element, so results do
    not depend on the order in which unions are applied.
    """

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        root, child = (ra, rb) if ra < rb else (rb, ra)
        self.parent[child] = root
        self.size[root] += self.size[child]
        return root

    def labels(self) -> np.ndarray:
        """Component label per element: the component's smallest member."""
        return np.array([self.find(i) for i in range(len(self.parent))], dtype=np.int64)


@dataclass
class ClusterSet:
    labels: np.ndarray  # (N,) cluster index per sample, clusters numbered by first member
    anchors: np.ndarray  # (n_clusters,) sample index of each cluster's medoid

    @property
    def n_clusters(self) -> int:
        return len(self.anchors)

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Renumber labels 0..k-1 in order of first appearance."""
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first, kind="stable"), kind="stable")
    return order[inverse]


def cluster_associate(X, threshold: float) -> ClusterSet:
    """Single-link clustering: samples closer than ``threshold`` (Euclidean) share a cluster.

    Anchors are cluster medoids (minimum summed distance, lowest index on ties).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeMismatchError("clustering input must be (N, dim)")
    if not np.all(np.isfinite(X)):
        raise ValueError("embeddings must be finite")
    dist = np.sqrt(sq_euclidean(X, X))
    ds = DisjointSet(len(X))
    ii, jj = np.nonzero(np.triu(dist < threshold, k=1))
    for i, j in zip(ii.tolist(), jj.tolist()):
        ds.union(i, j)
    labels = _canonical(ds.labels())
    anchors = []
    for c in range(labels.max() + 1 if len(labels) else 0):
        m = np.flatnonzero(labels == c)
        anchors.append(m[np.argmin(dist[np.ix_(m, m)].sum(axis=1))])
    return ClusterSet(labels, np.array(anchors, dtype=np.int64))


def anchor_knn(anchors, k: int) -> list[tuple[int, int]]:
    """For each anchor, links ``(i, j)`` to its ``k`` nearest other anchors (ties by index)."""
    A = np.asarray(anchors, dtype=np.float64)
    n = A.shape[0]
    if not 0 <= k < n:
        raise KTooLargeError(f"k={k} needs at least {k + 1} anchors, have {n}")
    dist = sq_euclidean(A, A)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return [(i, int(j)) for i in range(n) for j in order[i]]


def merge_links(clusters: ClusterSet, verified: Iterable[tuple[int, int]]) -> np.ndarray:
    """Identity index per sample after merging clusters joined by verified links.

    Links refer to cluster indices. Identities are numbered by first sample.
    """
    n = clusters.n_clusters
    ds = DisjointSet(n)
    for a, b in verified:
        if not (0 <= a < n and 0 <= b < n):
            raise DanglingLinkError(f"link ({a}, {b}) references a missing cluster")
        ds.union(int(a), int(b))
    return _canonical(ds.labels()[clusters.labels])


def oracle_verify(links: Sequence[tuple[int, int]], anchor_truth: Sequence[Hashable],
                  error_rate: float = 0.0, seed: int = 0) -> list[tuple[int, int]]:
    """Simulated annotation: keep links whose anchors share a true identity.

    With ``error_rate > 0`` each decision is flipped with that probability.
    """
    rng = make_rng(seed, "annotate")
    flips = rng.random(len(links)) < error_rate
    return [(a, b) for (a, b), flip in zip(links, flips)
            if (anchor_truth[a] == anchor_truth[b]) != flip]


def pairwise_f1(predicted, truth) -> float:
    """F1 of the same-identity relation over all unordered sample pairs."""
    predicted = _canonical(np.asarray(predicted))
    truth = _canonical(np.asarray(truth))
    table = np.zeros((predicted.max() + 1, truth.max() + 1), dtype=np.int64)
    np.add.at(table, (predicted, truth), 1)

    def pairs(c):
        return float((c * (c - 1) // 2).sum())

    tp = pairs(table)
    pred_pairs = pairs(table.sum(axis=1))
    true_pairs = pairs(table.sum(axis=0))
    if pred_pairs == 0 and true_pairs == 0:
        return 1.0
    if tp == 0:
        return 0.0
    precision, recall = tp / pred_pairs, tp / true_pairs
    return 2 * precision * recall / (precision + recall)


@dataclass
class AssociationResult:
    clusters: ClusterSet
    links: list[tuple[int, int]]
    verified: list[tuple[int, int]]
    identities: np.ndarray
    f1: Optional[float]


def associate(features, face, threshold: float, k: int, truth=None, error_rate: float = 0.0,
              seed: int = 0) -> AssociationResult:
    """Run the full association pipeline.

    Args:
        features: ``(N, dim)`` re-id features used for clustering.
        face: ``(N, f)`` face descriptors; only anchors' rows are used.
        threshold: single-link distance threshold.
        k: neighbours per anchor in the face search (capped at anchors - 1).
        truth: optional true identity per sample; drives the simulated
            annotator and the reported pairwise F1. Without it every candidate
            link is accepted.
    """
    clusters = cluster_associate(features, threshold)
    face = np.asarray(face, dtype=np.float64)
    k = min(k, clusters.n_clusters - 1)
    links = anchor_knn(face[clusters.anchors], k) if k > 0 else []
    if truth is None:
        verified = list(links)
    else:
        truth = np.asarray(truth)
        verified = oracle_verify(links, truth[clusters.anchors], error_rate, seed)
    ids = merge_links(clusters, verified)
    f1 = pairwise_f1(ids, truth) if truth is not None else None
    return AssociationResult(clusters, links, verified, ids, f1)
