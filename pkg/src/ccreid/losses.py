"""Identification loss, batch-hard triplet loss and the combined objective.

All losses return ``(value, grads)`` where ``grads`` is a dict of arrays
shaped like the corresponding inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import sq_euclidean, stack_embeddings
from .errors import (EmptyTripletSetError, InvalidConfigError, LabelOutOfRangeError,
                     NoValidAnchorError, ShapeMismatchError)

DEFAULT_MARGIN = 0.3
DEFAULT_ALPHA = 1.0


@dataclass(frozen=True)
class LossConfig:
    margin: float = DEFAULT_MARGIN
    alpha: float = DEFAULT_ALPHA
    aux_weight: float = 1.0

    def __post_init__(self):
        for name in ("margin", "alpha", "aux_weight"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise InvalidConfigError(f"{name} must be a nonnegative real, got {v}")


class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int


def init_classifier(n_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """``(L, dim)`` classifier weights, one row per identity."""
    if n_classes < 2:
        raise ValueError("a classifier needs at least two classes")
    bound = 1.0 / np.sqrt(dim)
    return rng.uniform(-bound, bound, size=(n_classes, dim))


def id_loss(features, labels, weights):
    """Mean softmax cross-entropy of ``weights @ f`` against integer labels.

    Returns:
        ``(loss, {"features": (N, d), "weights": (L, d)})``
    """
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    Wc = np.asarray(weights, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    N = F.shape[0]
    if F.shape[1] != Wc.shape[1] or y.shape[0] != N:
        raise ShapeMismatchError(f"features {F.shape}, labels {y.shape}, weights {Wc.shape}")
    L = Wc.shape[0]
    if np.any((y < 0) | (y >= L)):
        raise LabelOutOfRangeError(f"labels must lie in [0, {L})")
    logits = F @ Wc.T
    logits = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(logits).sum(axis=1))
    log_p = logits[np.arange(N), y] - log_z
    loss = float(-log_p.mean())
    G = np.exp(logits - log_z[:, None])
    G[np.arange(N), y] -= 1.0
    G /= N
    return loss, {"features": G @ Wc, "weights": G.T @ F}


def triplet_loss(distances, triplets: Sequence[Triplet], config: LossConfig = LossConfig()):
    """Hinge ``[d(a, p) + margin - d(a, n)]_+`` averaged over the triplets.

    Args:
        distances: ``(B, B)`` table of pair distances.
        triplets: index triplets into the table.

    Returns:
        ``(loss, {"distances": (B, B)})``; triplets with an inactive hinge
        contribute no gradient.
    """
    D = np.asarray(distances, dtype=np.float64)
    if not triplets:
        raise EmptyTripletSetError("triplet loss needs at least one triplet")
    T = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    a, p, n = T.T
    h = D[a, p] + config.margin - D[a, n]
    active = h > 0
    grad = np.zeros_like(D)
    scale = 1.0 / len(T)
    np.add.at(grad, (a[active], p[active]), scale)
    np.add.at(grad, (a[active], n[active]), -scale)
    return float(np.sum(h[active]) * scale), {"distances": grad}


def sq_distance_backward(X, grad_D) -> np.ndarray:
    """Gradient w.r.t. the rows of ``X`` given the gradient of ``sq_euclidean(X, X)``."""
    G = np.asarray(grad_D, dtype=np.float64)
    Gs = G + G.T
    return 2.0 * (Gs.sum(axis=1)[:, None] * X - Gs @ X)


def _mine(D, labels):
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    diff = labels[:, None] != labels[None, :]
    triplets = []
    for i in range(len(labels)):
        pos = np.flatnonzero(same[i])
        neg = np.flatnonzero(diff[i])
        if pos.size == 0 or neg.size == 0:
            continue
        # argmax/argmin return the first (lowest) index on ties
        triplets.append(Triplet(i, int(pos[np.argmax(D[i, pos])]), int(neg[np.argmin(D[i, neg])])))
    if not triplets:
        raise NoValidAnchorError("no sample has both a positive and a negative in the batch")
    return triplets


def batch_hard_mine(embeddings) -> list[Triplet]:
    """One triplet per usable anchor: farthest positive, closest negative.

    Accepts a sequence of :class:`LabeledEmbedding`; the identity label is the
    record's ``person_id``. Distances are squared Euclidean; ties go to the
    lowest index. Anchors without a positive or a negative are skipped.
    """
    X = stack_embeddings(embeddings)
    labels = [e.record.person_id for e in embeddings]
    return _mine(sq_euclidean(X, X), labels)


def batch_hard_mine_array(X, labels) -> list[Triplet]:
    X = np.asarray(X, dtype=np.float64)
    return _mine(sq_euclidean(X, X), labels)


def batch_hard_mine_distances(D, labels) -> list[Triplet]:
    """Mining on a precomputed distance table."""
    return _mine(np.asarray(D, dtype=np.float64), labels)


def batch_hard_triplet_loss(X, labels, config: LossConfig = LossConfig()):
    """Triplet loss on embeddings with batch-hard triplets mined from them.

    The mined triplets are treated as constants, so the gradient is the
    subgradient that flows through the selected pairs.

    Returns:
        ``(loss, grad_X, triplets)``
    """
    X = np.asarray(X, dtype=np.float64)
    D = sq_euclidean(X, X)
    triplets = _mine(D, labels)
    loss, g = triplet_loss(D, triplets, config)
    return loss, sq_distance_backward(X, g["distances"]), triplets


def combined_loss(fused, biometric, labels, params_f, params_fb, config: LossConfig = LossConfig()):
    """``L_id(f) + alpha * L_triplet(f) + aux_weight * L_id(f_B)``.

    Triplets are mined on the fused embeddings. Terms whose weight is zero are
    skipped entirely (no mining, no error on batches without valid anchors).

    Returns:
        ``(total, grads)`` with keys ``fused``, ``biometric``, ``params_f``,
        ``params_fb`` and the individual ``terms``.
    """
    F = np.asarray(fused, dtype=np.float64)
    FB = np.asarray(biometric, dtype=np.float64)
    if F.shape[0] != FB.shape[0] or F.shape[0] != len(labels):
        raise ShapeMismatchError("fused, biometric and labels must have the same batch size")
    l_id, g_id = id_loss(F, labels, params_f)
    grad_F = g_id["features"]
    terms = {"id": l_id, "triplet": 0.0, "aux": 0.0}
    total = l_id
    if config.alpha > 0:
        l_tri, g_tri, _ = batch_hard_triplet_loss(F, labels, config)
        terms["triplet"] = l_tri
        total = total + config.alpha * l_tri
        grad_F = grad_F + config.alpha * g_tri
    grad_FB = np.zeros_like(FB)
    grad_Wfb = np.zeros_like(np.asarray(params_fb, dtype=np.float64))
    if config.aux_weight > 0:
        l_aux, g_aux = id_loss(FB, labels, params_fb)
        terms["aux"] = l_aux
        total = total + config.aux_weight * l_aux
        grad_FB = config.aux_weight * g_aux["features"]
        grad_Wfb = config.aux_weight * g_aux["weights"]
    return float(total), {
        "fused": grad_F, "biometric": grad_FB,
        "params_f": g_id["weights"], "params_fb": grad_Wfb, "terms": terms,
    }
