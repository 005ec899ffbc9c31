"""Cross-view quadratic discriminant analysis (XQDA) on labeled embeddings.

Pair differences within an identity and across identities are modeled as
zero-mean Gaussians with covariances ``S_I`` and ``S_E``. The subspace keeps
the generalized eigenvectors of ``S_E w = lam S_I w`` with ``lam > 1``; the
metric in that subspace is ``inv(P' S_I P) - inv(P' S_E P)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .core import LabeledEmbedding, stack_embeddings
from .errors import (InvalidConfigError, NoDiscriminativeDirectionError, ShapeMismatchError,
                     SingularCovarianceError)

DEFAULT_MAX_R = 128
DEFAULT_RIDGE = 1e-6


@dataclass
class XqdaModel:
    projection: np.ndarray  # (d, r)
    metric: np.ndarray  # (r, r)
    kept_ratios: np.ndarray  # (r,)

    @classmethod
    def identity(cls, dim: int) -> "XqdaModel":
        """A model whose distance is plain squared Euclidean."""
        return cls(np.eye(dim), np.eye(dim), np.full(dim, np.inf))

    @property
    def dim(self) -> int:
        return self.projection.shape[0]

    def project(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.projection


def difference_covariances(X, labels):
    """Intra- and extra-class covariances of pair differences.

    Sums over unordered pairs are assembled from per-class moments:
    ``sum_{i<j} (x_i - x_j)(x_i - x_j)' = n S - s s'`` with ``S = sum x x'``
    and ``s = sum x``.

    Returns:
        ``(cov_intra, cov_extra, n_intra_pairs, n_extra_pairs)``
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    n, d = X.shape
    S_all = X.T @ X
    s_all = X.sum(axis=0)
    total = n * S_all - np.outer(s_all, s_all)
    intra = np.zeros((d, d))
    n_intra = 0
    for c in np.unique(labels):
        Xc = X[labels == c]
        nc = Xc.shape[0]
        sc = Xc.sum(axis=0)
        intra += nc * (Xc.T @ Xc) - np.outer(sc, sc)
        n_intra += nc * (nc - 1) // 2
    n_extra = n * (n - 1) // 2 - n_intra
    if n_intra == 0:
        raise InvalidConfigError("XQDA needs an identity with at least two samples")
    if n_extra == 0:
        raise InvalidConfigError("XQDA needs at least two identities")
    cov_i = intra / n_intra
    cov_e = (total - intra) / n_extra
    return (cov_i + cov_i.T) / 2, (cov_e + cov_e.T) / 2, n_intra, n_extra


def xqda_fit_arrays(X, labels, max_r: int = DEFAULT_MAX_R, ridge: float = DEFAULT_RIDGE) -> XqdaModel:
    """Fit from an ``(N, d)`` array and identity labels.

    Args:
        max_r: cap on the subspace dimension (also capped by ``d``).
        ridge: ``ridge * trace(S_I) / d`` is added to the diagonal of ``S_I``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeMismatchError("XQDA input must be (N, d)")
    if max_r < 1:
        raise InvalidConfigError("max_r must be positive")
    cov_i, cov_e, _, _ = difference_covariances(X, labels)
    d = X.shape[1]
    if ridge > 0:
        cov_i = cov_i + ridge * np.trace(cov_i) / d * np.eye(d)
    try:
        ratios, vecs = scipy.linalg.eigh(cov_e, cov_i)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"intra-class covariance is singular: {exc}") from exc
    order = np.argsort(-ratios, kind="stable")
    ratios, vecs = ratios[order], vecs[:, order]
    keep = np.flatnonzero(ratios > 1.0)[:min(max_r, d)]
    if keep.size == 0:
        raise NoDiscriminativeDirectionError(f"largest eigen-ratio {ratios[0]:.6g} does not exceed 1")
    P = vecs[:, keep]
    M = np.linalg.inv(P.T @ cov_i @ P) - np.linalg.inv(P.T @ cov_e @ P)
    return XqdaModel(P, (M + M.T) / 2, ratios[keep])


def xqda_fit(train: Sequence[LabeledEmbedding], max_r: int = DEFAULT_MAX_R,
             ridge: float = DEFAULT_RIDGE) -> XqdaModel:
    """Fit on labeled embeddings; the label is the record's ``person_id``."""
    return xqda_fit_arrays(stack_embeddings(train), [e.record.person_id for e in train], max_r, ridge)


def xqda_distance(q, g, model: XqdaModel) -> float:
    """``(P'(q - g))' M (P'(q - g))``."""
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if q.shape != g.shape or q.shape != (model.dim,):
        raise ShapeMismatchError(f"vectors {q.shape}, {g.shape} do not match model dim {model.dim}")
    z = model.projection.T @ (q - g)
    return float(z @ model.metric @ z)


def xqda_pairwise(Q, G, model: XqdaModel, chunk: int = 256) -> np.ndarray:
    """XQDA distances between all rows of ``Q`` and ``G``, computed in row chunks."""
    Q = np.asarray(Q, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if Q.ndim != 2 or G.ndim != 2 or Q.shape[1] != model.dim or G.shape[1] != model.dim:
        raise ShapeMismatchError(f"inputs {Q.shape}, {G.shape} do not match model dim {model.dim}")
    A, B = model.project(Q), model.project(G)
    out = np.empty((A.shape[0], B.shape[0]))
    for start in range(0, A.shape[0], chunk):
        diff = A[start:start + chunk, None, :] - B[None, :, :]
        out[start:start + chunk] = np.einsum("ijk,kl,ijl->ij", diff, model.metric, diff, optimize=True)
    return out
