"""Biometric/clothes head on top of backbone feature maps.

The biometric branch reduces a person map to ``n`` channels with three
per-pixel linear layers (1x1 convolutions), normalizes each channel with a
softmax over all ``H*W`` locations, max-pools across channels to get a spatial
mask, and averages the mask-weighted map. The clothes branch average-pools the
clothes map. The two D-vectors are concatenated, linearly projected to ``d``
dimensions and L2-normalized.

Every function works on batches: person maps ``(B, H, W, D)``, clothes maps
``(B, Hc, Wc, D)``. Single-sample wrappers are provided for convenience.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .core import ZERO_NORM, check_feature_map
from .errors import ShapeMismatchError, StaleCacheError, ZeroVectorError

DEFAULT_REDUCED_CHANNELS = 8
DEFAULT_EMBED_DIM = 256


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class MaskParams:
    w1: np.ndarray  # (D, h1)
    b1: np.ndarray
    w2: np.ndarray  # (h1, h2)
    b2: np.ndarray
    w3: np.ndarray  # (h2, n)
    b3: np.ndarray

    @classmethod
    def init(cls, depth: int, rng: np.random.Generator, n: int = DEFAULT_REDUCED_CHANNELS,
             hidden: Optional[tuple[int, int]] = None) -> "MaskParams":
        h1, h2 = hidden if hidden is not None else (max(depth // 4, n),) * 2
        return cls(
            w1=_uniform(rng, depth, (depth, h1)), b1=_uniform(rng, depth, (h1,)),
            w2=_uniform(rng, h1, (h1, h2)), b2=_uniform(rng, h1, (h2,)),
            w3=_uniform(rng, h2, (h2, n)), b3=_uniform(rng, h2, (n,)),
        )

    @property
    def depth(self) -> int:
        return self.w1.shape[0]

    @property
    def n(self) -> int:
        return self.w3.shape[1]

    def validate(self):
        if (self.w1.shape[1] != self.b1.shape[0] or self.w2.shape != (self.w1.shape[1], self.b2.shape[0])
                or self.w3.shape != (self.w2.shape[1], self.b3.shape[0])):
            raise ShapeMismatchError("mask layer shapes do not chain")
        for f in fields(self):
            if not np.all(np.isfinite(getattr(self, f.name))):
                raise ValueError(f"mask parameter {f.name} is not finite")


@dataclass
class FusionParams:
    weight: np.ndarray  # (d, 2D)
    bias: np.ndarray  # (d,)

    @classmethod
    def init(cls, depth: int, rng: np.random.Generator, dim: int = DEFAULT_EMBED_DIM) -> "FusionParams":
        return cls(weight=_uniform(rng, 2 * depth, (dim, 2 * depth)), bias=_uniform(rng, 2 * depth, (dim,)))

    @property
    def dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class HeadParams:
    mask: MaskParams
    fusion: FusionParams

    @classmethod
    def init(cls, depth: int, rng: np.random.Generator, n: int = DEFAULT_REDUCED_CHANNELS,
             dim: int = DEFAULT_EMBED_DIM) -> "HeadParams":
        return cls(MaskParams.init(depth, rng, n=n), FusionParams.init(depth, rng, dim=dim))

    def to_dict(self) -> dict[str, np.ndarray]:
        out = {f"mask.{f.name}": getattr(self.mask, f.name) for f in fields(self.mask)}
        out.update({f"fusion.{f.name}": getattr(self.fusion, f.name) for f in fields(self.fusion)})
        return out

    @classmethod
    def from_dict(cls, d: dict[str, np.ndarray]) -> "HeadParams":
        mask = MaskParams(**{f.name: np.asarray(d[f"mask.{f.name}"], dtype=np.float64) for f in fields(MaskParams)})
        fusion = FusionParams(**{f.name: np.asarray(d[f"fusion.{f.name}"], dtype=np.float64)
                                 for f in fields(FusionParams)})
        return cls(mask, fusion)


@dataclass
class HeadGradients:
    mask: MaskParams
    fusion: FusionParams
    person_maps: np.ndarray
    clothes_maps: Optional[np.ndarray]

    def params_dict(self) -> dict[str, np.ndarray]:
        return HeadParams(self.mask, self.fusion).to_dict()


@dataclass
class MaskCache:
    X: np.ndarray  # (B, P, D) flattened person maps
    spatial: tuple[int, int]
    Z1: np.ndarray
    Z2: np.ndarray
    S: np.ndarray  # (B, P, n) per-channel spatial softmax
    argmax: np.ndarray  # (B, P) winning channel of the max-pool
    M: np.ndarray  # (B, P)
    fixed_logits: bool


@dataclass
class HeadCache:
    mask: MaskCache
    clothes_shape: tuple
    u: np.ndarray  # (B, 2D) concatenated branch features
    z: np.ndarray  # (B, d) pre-normalization projection
    znorm: np.ndarray  # (B, 1)
    f: np.ndarray
    drop: Optional[str]
    params: HeadParams


def _spatial_softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def mask_forward_batch(A_p, params: MaskParams, logits=None):
    """Masks and biometric features for a batch of person maps.

    Args:
        A_p: ``(B, H, W, D)`` person feature maps.
        params: mask module parameters.
        logits: optional ``(B, H, W, n)`` pre-softmax values that replace the
            output of the three linear layers (the layers are then bypassed).

    Returns:
        ``(masks (B, H, W), f_B (B, D), cache)``
    """
    A_p = check_feature_map(A_p, "person maps", batched=True)
    B, H, W, D = A_p.shape
    if D != params.depth:
        raise ShapeMismatchError(f"person map depth {D} != mask input depth {params.depth}")
    P = H * W
    X = A_p.reshape(B, P, D)
    if logits is None:
        Z1 = X @ params.w1 + params.b1
        Z2 = np.maximum(Z1, 0.0) @ params.w2 + params.b2
        Z3 = np.maximum(Z2, 0.0) @ params.w3 + params.b3
    else:
        Z3 = np.asarray(logits, dtype=np.float64).reshape(B, P, -1)
        Z1 = Z2 = None
    S = _spatial_softmax(Z3)
    idx = S.argmax(axis=2)  # first maximum on ties
    M = np.take_along_axis(S, idx[..., None], axis=2)[..., 0]
    f_B = np.einsum("bpd,bp->bd", X, M) / P
    cache = MaskCache(X, (H, W), Z1, Z2, S, idx, M, logits is not None)
    return M.reshape(B, H, W), f_B, cache


def mask_forward(A_p, params: MaskParams, logits=None):
    """Single-sample form of :func:`mask_forward_batch` for an ``(H, W, D)`` map."""
    A_p = check_feature_map(A_p, "person map")
    masks, f_B, cache = mask_forward_batch(
        A_p[None], params, None if logits is None else np.asarray(logits)[None])
    return masks[0], f_B[0], cache


def fuse(f_B, f_C, params: FusionParams) -> np.ndarray:
    """``l2_normalize(W @ [f_B; f_C] + b)`` for one sample or a batch of rows."""
    f_B = np.asarray(f_B, dtype=np.float64)
    f_C = np.asarray(f_C, dtype=np.float64)
    if f_B.shape != f_C.shape or 2 * f_B.shape[-1] != params.weight.shape[1]:
        raise ShapeMismatchError(
            f"cannot fuse {f_B.shape} and {f_C.shape} with weight {params.weight.shape}")
    z = np.concatenate([f_B, f_C], axis=-1) @ params.weight.T + params.bias
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    if np.any(~(norm >= ZERO_NORM)):
        raise ZeroVectorError("fused feature has zero norm")
    return z / norm


def head_forward(A_p, A_c, params: HeadParams, drop: Optional[str] = None, logits=None):
    """Fused, normalized embeddings for a batch of (person map, clothes map) pairs.

    ``drop`` zeroes one branch feature before fusion: ``"clothes"`` keeps only
    the biometric feature, ``"biometric"`` keeps only the clothes feature.

    Returns:
        ``(f (B, d), f_B (B, D), f_C (B, D), cache)``
    """
    if drop not in (None, "biometric", "clothes"):
        raise ValueError(f"unknown branch to drop: {drop!r}")
    _, f_B, mcache = mask_forward_batch(A_p, params.mask, logits=logits)
    A_c = check_feature_map(A_c, "clothes maps", batched=True)
    if A_c.shape[0] != f_B.shape[0] or A_c.shape[3] != f_B.shape[1]:
        raise ShapeMismatchError(f"clothes maps {A_c.shape} do not match person batch")
    f_C = A_c.mean(axis=(1, 2))
    u_B = np.zeros_like(f_B) if drop == "biometric" else f_B
    u_C = np.zeros_like(f_C) if drop == "clothes" else f_C
    u = np.concatenate([u_B, u_C], axis=1)
    if u.shape[1] != params.fusion.weight.shape[1]:
        raise ShapeMismatchError("branch features do not match the fusion weight")
    z = u @ params.fusion.weight.T + params.fusion.bias
    znorm = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(~(znorm >= ZERO_NORM)):
        raise ZeroVectorError("fused feature has zero norm")
    f = z / znorm
    return f, f_B, f_C, HeadCache(mcache, A_c.shape, u, z, znorm, f, drop, params)


def head_backward(grad_f, cache: HeadCache, grad_fB=None) -> HeadGradients:
    """Back-propagate gradients of a scalar loss through the head.

    Args:
        grad_f: ``(B, d)`` gradient w.r.t. the normalized fused features.
        cache: the cache returned by the matching :func:`head_forward`.
        grad_fB: optional ``(B, D)`` extra gradient w.r.t. the biometric
            features (from a loss imposed directly on them).

    Returns:
        Gradients w.r.t. every mask and fusion parameter and both input maps.
        Parameter gradients are summed over the batch.
    """
    mc = cache.mask
    B, P, D = mc.X.shape
    grad_f = np.asarray(grad_f, dtype=np.float64)
    if grad_f.shape != cache.f.shape:
        raise StaleCacheError(f"upstream gradient {grad_f.shape} does not match cache {cache.f.shape}")
    if grad_fB is not None and np.shape(grad_fB) != (B, D):
        raise StaleCacheError(f"biometric gradient {np.shape(grad_fB)} does not match cache {(B, D)}")

    f = cache.f
    g_z = (grad_f - f * np.sum(f * grad_f, axis=1, keepdims=True)) / cache.znorm
    fusion = FusionParams(weight=g_z.T @ cache.u, bias=g_z.sum(axis=0))
    g_u = g_z @ cache.params.fusion.weight
    g_fB = g_u[:, :D].copy() if cache.drop != "biometric" else np.zeros((B, D))
    g_fC = g_u[:, D:] if cache.drop != "clothes" else np.zeros((B, D))
    if grad_fB is not None:
        g_fB = g_fB + grad_fB

    Hc, Wc = cache.clothes_shape[1:3]
    g_Ac = np.broadcast_to(g_fC[:, None, None, :] / (Hc * Wc), cache.clothes_shape).copy()

    # f_B = (1/P) sum_p X_p M_p
    g_X = g_fB[:, None, :] * mc.M[:, :, None] / P
    g_M = np.einsum("bpd,bd->bp", mc.X, g_fB) / P
    g_S = np.zeros_like(mc.S)
    np.put_along_axis(g_S, mc.argmax[..., None], g_M[..., None], axis=2)
    g_Z3 = mc.S * (g_S - np.sum(g_S * mc.S, axis=1, keepdims=True))

    w = cache.params.mask
    if mc.fixed_logits:
        mask = MaskParams(*(np.zeros_like(getattr(w, f.name)) for f in fields(MaskParams)))
    else:
        R2 = np.maximum(mc.Z2, 0.0)
        R1 = np.maximum(mc.Z1, 0.0)
        g_w3 = np.einsum("bph,bpn->hn", R2, g_Z3)
        g_b3 = g_Z3.sum(axis=(0, 1))
        g_Z2 = (g_Z3 @ w.w3.T) * (mc.Z2 > 0)
        g_w2 = np.einsum("bph,bpk->hk", R1, g_Z2)
        g_b2 = g_Z2.sum(axis=(0, 1))
        g_Z1 = (g_Z2 @ w.w2.T) * (mc.Z1 > 0)
        g_w1 = np.einsum("bpd,bph->dh", mc.X, g_Z1)
        g_b1 = g_Z1.sum(axis=(0, 1))
        g_X = g_X + g_Z1 @ w.w1.T
        mask = MaskParams(g_w1, g_b1, g_w2, g_b2, g_w3, g_b3)

    H, W = mc.spatial
    return HeadGradients(mask, fusion, g_X.reshape(B, H, W, D), g_Ac)
