"""k-reciprocal re-ranking of a query-gallery distance matrix.

Queries and gallery are pooled into one set of ``N = nq + ng`` probes. For each
probe ``p``:

1. ``R(p, k1)``: members of the top ``k1 + 1`` of ``p`` that also have ``p`` in
   their own top ``k1 + 1``;
2. every ``c`` in ``R(p, k1)`` whose ``R(c, round(k1 / 2))`` overlaps
   ``R(p, k1)`` in at least two thirds of its elements contributes that set;
3. the expanded set is encoded as a sparse vector with weights
   ``exp(-d(p, x))`` normalized to sum 1, then averaged over the ``k2``
   nearest neighbours of ``p`` (local query expansion).

The Jaccard distance between two encodings is ``1 - sum(min) / sum(max)``.
Rankings and Gaussian weights use the pooled distances divided by each row's
maximum; the final mix uses the distances as supplied.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, NonFiniteDistanceError, ShapeMismatchError

EXPANSION_OVERLAP = 2.0 / 3.0


@dataclass(frozen=True)
class RerankConfig:
    k1: int = 20
    k2: int = 6
    lam: float = 0.3

    def __post_init__(self):
        if not (self.k1 >= self.k2 >= 1):
            raise InvalidConfigError(f"need k1 >= k2 >= 1, got k1={self.k1}, k2={self.k2}")
        if not 0 <= self.lam <= 1:
            raise InvalidConfigError(f"lambda must lie in [0, 1], got {self.lam}")


def _check(name, M, shape):
    M = np.asarray(M, dtype=np.float64)
    if M.shape != shape:
        raise ShapeMismatchError(f"{name} has shape {M.shape}, expected {shape}")
    if not np.all(np.isfinite(M)):
        raise NonFiniteDistanceError(f"{name} contains non-finite distances")
    if np.any(M < 0):
        raise ValueError(f"{name} contains negative distances")
    return M


def pooled_distances(dist_qg, dist_qq, dist_gg) -> np.ndarray:
    """The ``(N, N)`` block matrix over queries followed by gallery."""
    return np.block([[dist_qq, dist_qg], [dist_qg.T, dist_gg]])


def reciprocal_neighbors(rank: np.ndarray, i: int, k: int) -> np.ndarray:
    forward = rank[i, :k + 1]
    backward = rank[forward, :k + 1]
    return forward[np.any(backward == i, axis=1)]


def kreciprocal_encodings(full: np.ndarray, k1: int, k2: int) -> np.ndarray:
    """Row-stochastic ``(N, N)`` encodings of the expanded k-reciprocal sets."""
    N = full.shape[0]
    row_max = full.max(axis=1, keepdims=True)
    norm = np.divide(full, row_max, out=np.zeros_like(full), where=row_max > 0)
    rank = np.argsort(norm, axis=1, kind="stable")
    half = int(np.around(k1 / 2))
    V = np.zeros((N, N))
    for i in range(N):
        R = reciprocal_neighbors(rank, i, k1)
        expanded = set(R.tolist())
        for c in R:
            Rc = reciprocal_neighbors(rank, int(c), half)
            if len(np.intersect1d(Rc, R)) >= EXPANSION_OVERLAP * len(Rc):
                expanded.update(Rc.tolist())
        idx = np.array(sorted(expanded), dtype=np.int64)
        if idx.size:
            w = np.exp(-norm[i, idx])
            V[i, idx] = w / w.sum()
    if k2 > 1:
        V = V[rank[:, :k2]].mean(axis=1)
    return V


def jaccard_distance(Vq: np.ndarray, Vg: np.ndarray, chunk: int = 64) -> np.ndarray:
    """``1 - sum(min) / sum(max)`` between every row of ``Vq`` and ``Vg``."""
    out = np.ones((Vq.shape[0], Vg.shape[0]))
    for s in range(0, Vq.shape[0], chunk):
        a = Vq[s:s + chunk, None, :]
        mn = np.minimum(a, Vg[None]).sum(axis=2)
        mx = np.maximum(a, Vg[None]).sum(axis=2)
        out[s:s + chunk] = 1.0 - np.divide(mn, mx, out=np.zeros_like(mn), where=mx > 0)
    return np.clip(out, 0.0, 1.0)


def kreciprocal_rerank(dist_qg, dist_qq, dist_gg, config: RerankConfig = RerankConfig(),
                       return_jaccard: bool = False):
    """Re-ranked query-gallery distances ``lam * d + (1 - lam) * d_J``.

    Args:
        dist_qg: ``(nq, ng)`` query-gallery distances.
        dist_qq: ``(nq, nq)`` query-query distances.
        dist_gg: ``(ng, ng)`` gallery-gallery distances.
        return_jaccard: also return the Jaccard component.
    """
    dist_qg = np.asarray(dist_qg, dtype=np.float64)
    if dist_qg.ndim != 2:
        raise ShapeMismatchError("dist_qg must be 2-D")
    nq, ng = dist_qg.shape
    dist_qg = _check("dist_qg", dist_qg, (nq, ng))
    dist_qq = _check("dist_qq", dist_qq, (nq, nq))
    dist_gg = _check("dist_gg", dist_gg, (ng, ng))
    if config.lam == 1.0 and not return_jaccard:
        return dist_qg.copy()
    V = kreciprocal_encodings(pooled_distances(dist_qg, dist_qq, dist_gg), config.k1, config.k2)
    jac = jaccard_distance(V[:nq], V[nq:])
    final = config.lam * dist_qg + (1.0 - config.lam) * jac
    return (final, jac) if return_jaccard else final
