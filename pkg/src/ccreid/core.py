"""Shared containers, labels and elementary vector operations.

Feature maps are plain ``float64`` arrays laid out ``(H, W, D)`` (row, column,
channel); batches of them are ``(N, H, W, D)``. Embeddings are 1-D arrays,
batches of embeddings are ``(N, dim)``.
"""
from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeMismatchError, ZeroVectorError

ZERO_NORM = 1e-12


class Role(str, enum.Enum):
    QUERY = "query"
    GALLERY = "gallery"


class ClothesSource(str, enum.Enum):
    TEMPLATE = "template"
    DETECTED_PATCH = "detected_patch"


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class SampleRecord:
    """One person observation.

    ``split``, ``role`` and ``clothes_source`` stay ``None`` until the
    partition procedures assign them.
    """

    sample_id: str
    person_id: str
    clothes_group_id: str
    split: Optional[Split] = None
    role: Optional[Role] = None
    clothes_source: Optional[ClothesSource] = None

    def __post_init__(self):
        if self.role is Role.QUERY and self.clothes_source is not ClothesSource.TEMPLATE:
            raise ValueError(f"{self.sample_id}: query samples must use a clothes template")
        if self.role is Role.GALLERY and self.clothes_source is not ClothesSource.DETECTED_PATCH:
            raise ValueError(f"{self.sample_id}: gallery samples must use a detected patch")

    @property
    def group_key(self) -> tuple[str, str]:
        return (self.person_id, self.clothes_group_id)

    def with_split(self, split: Split) -> "SampleRecord":
        return replace(self, split=split)

    def with_role(self, role: Role) -> "SampleRecord":
        source = ClothesSource.TEMPLATE if role is Role.QUERY else ClothesSource.DETECTED_PATCH
        return replace(self, role=role, clothes_source=source)


@dataclass(frozen=True)
class LabeledEmbedding:
    record: SampleRecord
    vector: np.ndarray


def stack_embeddings(items: Sequence[LabeledEmbedding]) -> np.ndarray:
    """Stack the vectors of a collection into an ``(N, dim)`` array."""
    if not items:
        raise ShapeMismatchError("empty embedding collection")
    dims = {np.shape(it.vector) for it in items}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise ShapeMismatchError(f"inconsistent embedding shapes: {sorted(dims)}")
    return np.stack([np.asarray(it.vector, dtype=np.float64) for it in items])


def check_feature_map(A, name: str = "feature map", batched: bool = False) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    ndim = 4 if batched else 3
    if A.ndim != ndim or min(A.shape[-3:]) < 1:
        raise ShapeMismatchError(f"{name} must have shape {'(N, H, W, D)' if batched else '(H, W, D)'}, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite values")
    return A


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm.

    Raises:
        ZeroVectorError: if ``||v|| < 1e-12``.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not norm >= ZERO_NORM:
        raise ZeroVectorError(f"cannot normalize vector with norm {norm:.3g}")
    return v / norm


def l2_normalize_rows(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(~(norms >= ZERO_NORM)):
        raise ZeroVectorError("cannot normalize a row with zero norm")
    return X / norms


def avg_pool(A) -> np.ndarray:
    """Mean over all spatial locations of an ``(H, W, D)`` map, giving a D-vector."""
    A = check_feature_map(A)
    return A.mean(axis=(0, 1))


def sq_euclidean(X, Y) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``X`` and ``Y``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise ShapeMismatchError(f"cannot compare {X.shape} with {Y.shape}")
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _key_int(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode())
    return int(key)


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Counter-based generator for the sub-stream identified by ``keys``.

    Every (seed, keys) combination yields an independent, reproducible Philox
    stream, so stages can be re-run in isolation.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
