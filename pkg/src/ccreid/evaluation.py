"""Distance matrices, mAP/CMC and the query/gallery evaluation pipeline."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import LabeledEmbedding, sq_euclidean, stack_embeddings
from .errors import NoRelevantTargetError, ShapeMismatchError
from .rerank import RerankConfig, kreciprocal_rerank
from .xqda import XqdaModel, xqda_pairwise

DEFAULT_MAX_RANK = 50
REPORT_RANKS = (1, 5, 10)


@dataclass
class DistanceMatrix:
    values: np.ndarray  # (n_query, n_gallery)
    query_ids: list[str]
    gallery_ids: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.query_ids), len(self.gallery_ids)):
            raise ShapeMismatchError(
                f"distance shape {self.values.shape} does not match {len(self.query_ids)} x {len(self.gallery_ids)} ids")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("distance matrix contains non-finite values")


@dataclass
class EvalReport:
    mAP: float
    cmc: np.ndarray
    average_precisions: np.ndarray
    metric: str

    def top(self, k: int) -> float:
        return float(self.cmc[k - 1])

    def as_dict(self) -> dict[str, float]:
        out = {"metric": self.metric, "mAP": float(self.mAP)}
        out.update({f"top{k}": self.top(k) for k in REPORT_RANKS if k <= len(self.cmc)})
        return out


def distance_matrix(queries: Sequence[LabeledEmbedding], gallery: Sequence[LabeledEmbedding],
                    metric: str = "euclid", model: Optional[XqdaModel] = None) -> DistanceMatrix:
    """Pairwise query-gallery distances.

    Args:
        metric: ``"euclid"`` (squared Euclidean) or ``"xqda"`` (needs ``model``).
    """
    Q, G = stack_embeddings(queries), stack_embeddings(gallery)
    values = pairwise_distances(Q, G, metric, model)
    return DistanceMatrix(values, [q.record.sample_id for q in queries], [g.record.sample_id for g in gallery])


def pairwise_distances(Q, G, metric: str = "euclid", model: Optional[XqdaModel] = None) -> np.ndarray:
    if metric == "euclid":
        return sq_euclidean(Q, G)
    if metric == "xqda":
        if model is None:
            raise ValueError("xqda metric needs a fitted model")
        return xqda_pairwise(Q, G, model)
    raise ValueError(f"unknown metric {metric!r}")


def _ranked_matches(dist, query_pids, gallery_pids, gallery_keys):
    """Per query, the boolean relevance vector in ranked order.

    Ranking is ascending distance, ties broken by ascending gallery key.
    """
    if isinstance(dist, DistanceMatrix):
        if gallery_keys is None:
            gallery_keys = dist.gallery_ids
        dist = dist.values
    dist = np.asarray(dist, dtype=np.float64)
    q = np.asarray(query_pids)
    g = np.asarray(gallery_pids)
    if dist.shape != (len(q), len(g)):
        raise ShapeMismatchError(f"distance shape {dist.shape} vs {len(q)} queries x {len(g)} gallery")
    if gallery_keys is None:
        key_rank = np.arange(len(g))
    else:
        key_rank = np.argsort(np.argsort(np.asarray(gallery_keys), kind="stable"), kind="stable")
    matches = np.empty(dist.shape, dtype=bool)
    for i in range(len(q)):
        order = np.lexsort((key_rank, dist[i]))
        matches[i] = g[order] == q[i]
    missing = np.flatnonzero(~matches.any(axis=1))
    if missing.size:
        raise NoRelevantTargetError(f"{missing.size} queries have no same-identity gallery sample (first: row {missing[0]})")
    return matches


def average_precisions(dist, query_pids, gallery_pids, gallery_keys=None) -> np.ndarray:
    matches = _ranked_matches(dist, query_pids, gallery_pids, gallery_keys)
    hits = np.cumsum(matches, axis=1)
    ranks = np.arange(1, matches.shape[1] + 1)
    precision = hits / ranks
    return (precision * matches).sum(axis=1) / matches.sum(axis=1)


def compute_map(dist, query_pids, gallery_pids, gallery_keys=None) -> float:
    """Mean over queries of the precision averaged at each relevant rank.

    Relevance is identity equality. ``dist`` may be a :class:`DistanceMatrix`
    (ties then break by gallery sample id) or a plain array (ties break by
    column index unless ``gallery_keys`` is given).
    """
    return float(average_precisions(dist, query_pids, gallery_pids, gallery_keys).mean())


def compute_cmc(dist, query_pids, gallery_pids, max_rank: int = DEFAULT_MAX_RANK,
                gallery_keys=None) -> np.ndarray:
    """``cmc[k]``: fraction of queries with a correct match within the top ``k + 1``.

    Past the gallery size the curve stays at its final value (1.0).
    """
    matches = _ranked_matches(dist, query_pids, gallery_pids, gallery_keys)
    first = matches.argmax(axis=1)  # 0-based rank of the first relevant item
    ks = np.arange(max_rank)
    return (first[None, :] <= ks[:, None]).mean(axis=1)


def evaluate_arrays(Q, G, query_pids, gallery_pids, metric: str = "euclid",
                    model: Optional[XqdaModel] = None, rerank: Optional[RerankConfig] = None,
                    gallery_keys=None, max_rank: int = DEFAULT_MAX_RANK) -> EvalReport:
    """Array form of :func:`evaluate`."""
    dist = pairwise_distances(Q, G, metric, model)
    label = metric
    if rerank is not None:
        qq = pairwise_distances(Q, Q, metric, model)
        gg = pairwise_distances(G, G, metric, model)
        # rank statistics ignore a global positive scale; bring the joint
        # matrix to [0, 1] so the original and Jaccard terms are commensurate
        scale = max(dist.max(), qq.max(), gg.max())
        if scale > 0:
            dist, qq, gg = dist / scale, qq / scale, gg / scale
        dist = kreciprocal_rerank(dist, qq, gg, rerank)
        label = f"{metric}+rr"
    aps = average_precisions(dist, query_pids, gallery_pids, gallery_keys)
    cmc = compute_cmc(dist, query_pids, gallery_pids, max_rank, gallery_keys)
    return EvalReport(float(aps.mean()), cmc, aps, label)


def evaluate(queries: Sequence[LabeledEmbedding], gallery: Sequence[LabeledEmbedding],
             metric: str = "euclid", model: Optional[XqdaModel] = None,
             rerank: Optional[RerankConfig] = None, max_rank: int = DEFAULT_MAX_RANK) -> EvalReport:
    """Distance matrix, optional re-ranking, then mAP and CMC.

    Ties in the ranking break by ascending gallery sample id.
    """
    return evaluate_arrays(
        stack_embeddings(queries), stack_embeddings(gallery),
        [q.record.person_id for q in queries], [g.record.person_id for g in gallery],
        metric=metric, model=model, rerank=rerank,
        gallery_keys=[g.record.sample_id for g in gallery], max_rank=max_rank)
