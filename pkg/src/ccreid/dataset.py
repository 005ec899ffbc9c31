"""Synthetic clothes-changing data and the train/test, query/gallery partitions.

The generator mimics what a backbone would hand to the head. Each identity has
a biometric latent, each clothes group a clothes latent. A person map carries
the biometric latent on a "head" band of rows and the worn clothes latent on
the remaining "body" rows; both are embedded into the ``D`` channels through
two fixed orthonormal projections. Clothes maps (template or detected patch)
carry only the clothes latent. Placement is a random circular shift of the
person map, occlusion zeroes a rectangular block.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import Role, SampleRecord, Split, make_rng
from .errors import (InvalidConfigError, SingleClothesIdentityError, TooFewIdentitiesError)

BENCHMARK_IDENTITIES = 5266
BENCHMARK_TRAIN_IDENTITIES = 2800


@dataclass(frozen=True)
class SynthConfig:
    n_identities: int = 64
    clothes_groups: tuple[int, int] = (2, 3)
    samples_per_group: tuple[int, int] = (2, 5)
    biometric_dim: int = 6
    clothes_dim: int = 6
    depth: int = 32
    person_hw: tuple[int, int] = (6, 4)
    clothes_hw: tuple[int, int] = (4, 4)
    head_rows: int = 2
    biometric_noise: float = 0.6
    clothes_detect_noise: float = 1.5
    occlusion_rate: float = 0.1
    clothes_palette: int = 0
    palette_jitter: float = 0.3
    face_noise: float = 0.3
    person_gain: float = 4.0
    seed: int = 0

    def validate(self):
        lo, hi = self.clothes_groups
        if not 1 <= lo <= hi:
            raise InvalidConfigError(f"clothes_groups range {self.clothes_groups} is invalid")
        lo, hi = self.samples_per_group
        if not 1 <= lo <= hi:
            raise InvalidConfigError(f"samples_per_group range {self.samples_per_group} is invalid")
        if self.n_identities < 1:
            raise InvalidConfigError("n_identities must be positive")
        for name in ("biometric_dim", "clothes_dim", "depth", "clothes_palette"):
            if getattr(self, name) < (0 if name == "clothes_palette" else 1):
                raise InvalidConfigError(f"{name} must be positive")
        if self.biometric_dim + self.clothes_dim > self.depth:
            raise InvalidConfigError("biometric_dim + clothes_dim must not exceed depth")
        if min(self.person_hw) < 1 or min(self.clothes_hw) < 1:
            raise InvalidConfigError("map sizes must be positive")
        if not 0 <= self.head_rows <= self.person_hw[0]:
            raise InvalidConfigError("head_rows must lie within the person map height")
        for name in ("biometric_noise", "clothes_detect_noise", "palette_jitter", "face_noise", "person_gain"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise InvalidConfigError(f"{name} must be nonnegative")
        if not 0 <= self.occlusion_rate <= 1:
            raise InvalidConfigError("occlusion_rate must lie in [0, 1]")
        return self


@dataclass
class GroundTruth:
    """Latent variables behind a synthetic dataset (rows align with the key lists)."""

    person_ids: list[str]
    biometric: np.ndarray  # (n_identities, biometric_dim)
    group_keys: list[tuple[str, str]]
    clothes: np.ndarray  # (n_groups, clothes_dim)
    occluded: np.ndarray  # (N,) bool, per sample
    projections: tuple[np.ndarray, np.ndarray]  # (D, bd), (D, cd)


@dataclass
class ReidData:
    """A manifest with per-sample backbone inputs, rows aligned with ``records``.

    ``template_maps[i]`` is the catalog template of sample ``i``'s own clothes
    group; ``patch_maps[i]`` is the clothes patch detected on sample ``i``.
    """

    records: list[SampleRecord]
    person_maps: np.ndarray  # (N, H, W, D)
    patch_maps: np.ndarray  # (N, Hc, Wc, D)
    template_maps: np.ndarray  # (N, Hc, Wc, D)
    face: np.ndarray  # (N, biometric_dim) face-proxy descriptors
    truth: Optional[GroundTruth] = None

    def __len__(self):
        return len(self.records)

    def with_records(self, records: Sequence[SampleRecord]) -> "ReidData":
        if [r.sample_id for r in records] != [r.sample_id for r in self.records]:
            raise ValueError("new records must keep sample order")
        return replace(self, records=list(records))

    def indices(self, split: Optional[Split] = None, role: Optional[Role] = None) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.records)
                         if (split is None or r.split is split) and (role is None or r.role is role)],
                        dtype=np.int64)

    def clothes_inputs(self) -> np.ndarray:
        """The clothes map fed to the clothes branch for every sample.

        Queries use the template of their identity's gallery clothes group;
        gallery samples (and samples without a role) use their detected patch.
        """
        gallery_group = gallery_groups(self.records)
        first_of_group: dict[tuple[str, str], int] = {}
        for i, r in enumerate(self.records):
            first_of_group.setdefault(r.group_key, i)
        out = self.patch_maps.copy()
        for i, r in enumerate(self.records):
            if r.role is Role.QUERY:
                out[i] = self.template_maps[first_of_group[(r.person_id, gallery_group[r.person_id])]]
        return out


def gallery_groups(records: Sequence[SampleRecord]) -> dict[str, str]:
    """Map person_id -> clothes group holding that identity's gallery samples."""
    out: dict[str, str] = {}
    for r in records:
        if r.role is Role.GALLERY:
            prev = out.setdefault(r.person_id, r.clothes_group_id)
            if prev != r.clothes_group_id:
                raise ValueError(f"identity {r.person_id} has gallery samples in several clothes groups")
    return out


def person_label(i: int) -> str:
    return f"p{i:05d}"


def synth_manifest(config: SynthConfig) -> list[SampleRecord]:
    """Records only: identities, clothes groups and sample ids, no feature maps."""
    config.validate()
    rng = make_rng(config.seed, "synth", "layout")
    g_lo, g_hi = config.clothes_groups
    s_lo, s_hi = config.samples_per_group
    n_groups = rng.integers(g_lo, g_hi + 1, size=config.n_identities)
    records = []
    for i, ng in enumerate(n_groups):
        pid = person_label(i)
        sizes = rng.integers(s_lo, s_hi + 1, size=ng)
        for g, ns in enumerate(sizes):
            for s in range(ns):
                records.append(SampleRecord(f"{pid}_c{g}_s{s}", pid, f"c{g}"))
    return records


def synth_generate(config: SynthConfig = SynthConfig()) -> ReidData:
    """Generate a desk-scale dataset with known latent structure. Deterministic in ``config.seed``."""
    records = synth_manifest(config)
    seed = config.seed
    D, bd, cd = config.depth, config.biometric_dim, config.clothes_dim
    H, W = config.person_hw
    Hc, Wc = config.clothes_hw

    Q, _ = np.linalg.qr(make_rng(seed, "synth", "proj").standard_normal((D, bd + cd)))
    P_bio, P_clo = Q[:, :bd], Q[:, bd:]

    person_ids = sorted({r.person_id for r in records})
    group_keys = sorted({r.group_key for r in records})
    pid_index = {p: i for i, p in enumerate(person_ids)}
    group_index = {g: i for i, g in enumerate(group_keys)}

    biometric = make_rng(seed, "synth", "biometric").standard_normal((len(person_ids), bd))
    crng = make_rng(seed, "synth", "clothes")
    if config.clothes_palette > 0:
        palette = crng.standard_normal((config.clothes_palette, cd))
        pick = crng.integers(0, config.clothes_palette, size=len(group_keys))
        clothes = palette[pick] + config.palette_jitter * crng.standard_normal((len(group_keys), cd))
    else:
        clothes = crng.standard_normal((len(group_keys), cd))

    N = len(records)
    srng = make_rng(seed, "synth", "samples")
    person_maps = np.empty((N, H, W, D))
    patch_maps = np.empty((N, Hc, Wc, D))
    template_maps = np.empty((N, Hc, Wc, D))
    face = np.empty((N, bd))
    occluded = np.zeros(N, dtype=bool)
    sb, sc = config.biometric_noise, config.clothes_detect_noise
    for i, r in enumerate(records):
        b = biometric[pid_index[r.person_id]]
        c = clothes[group_index[r.group_key]]
        A = np.empty((H, W, D))
        A[:config.head_rows] = P_bio @ (b + sb * srng.standard_normal(bd))
        A[config.head_rows:] = P_clo @ c
        A += 0.5 * sb * srng.standard_normal((H, W, D))
        A = np.roll(A, (srng.integers(0, H), srng.integers(0, W)), axis=(0, 1))
        if srng.random() < config.occlusion_rate:
            bh, bw = max(H // 2, 1), max(W // 2, 1)
            r0, c0 = srng.integers(0, H - bh + 1), srng.integers(0, W - bw + 1)
            A[r0:r0 + bh, c0:c0 + bw] = 0.0
            occluded[i] = True
        person_maps[i] = config.person_gain * A
        template_maps[i] = P_clo @ c
        patch_maps[i] = P_clo @ (c + sc * srng.standard_normal(cd))
        face[i] = b + config.face_noise * srng.standard_normal(bd)

    truth = GroundTruth(person_ids, biometric, group_keys, clothes, occluded, (P_bio, P_clo))
    return ReidData(records, person_maps, patch_maps, template_maps, face, truth)


def identities(records: Sequence[SampleRecord]) -> list[str]:
    return sorted({r.person_id for r in records})


def vertical_partition(records: Sequence[SampleRecord], train_fraction: float, seed: int
                       ) -> list[SampleRecord]:
    """Split identities (not samples) into train and test.

    The train count is ``round(train_fraction * n_ids)`` clamped so that both
    splits are non-empty.
    """
    if not 0 < train_fraction < 1:
        raise InvalidConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    ids = identities(records)
    if len(ids) < 2:
        raise TooFewIdentitiesError(f"need at least 2 identities to split, got {len(ids)}")
    n_train = min(max(int(round(train_fraction * len(ids))), 1), len(ids) - 1)
    order = make_rng(seed, "partition", "vertical").permutation(len(ids))
    train = {ids[j] for j in order[:n_train]}
    return [r.with_split(Split.TRAIN if r.person_id in train else Split.TEST) for r in records]


def horizontal_partition(records: Sequence[SampleRecord], seed: int,
                         splits: Optional[Sequence[Split]] = None) -> list[SampleRecord]:
    """Move one clothes group per identity to the gallery, the rest to the query set.

    Args:
        records: manifest records.
        seed: selects the gallery group of every identity (uniformly).
        splits: restrict the partition to identities of these splits; records
            of other identities are returned unchanged. ``None`` partitions all.

    Raises:
        SingleClothesIdentityError: an identity to partition has one clothes group.
    """
    groups: dict[str, list[str]] = defaultdict(list)
    for r in records:
        if (splits is None or r.split in splits) and r.clothes_group_id not in groups[r.person_id]:
            groups[r.person_id].append(r.clothes_group_id)
    chosen = {}
    for pid in sorted(groups):
        gs = sorted(groups[pid])
        if len(gs) < 2:
            raise SingleClothesIdentityError(f"identity {pid} has a single clothes group")
        chosen[pid] = gs[int(make_rng(seed, "partition", "horizontal", pid).integers(len(gs)))]
    out = []
    for r in records:
        if r.person_id not in chosen:
            out.append(r)
        else:
            out.append(r.with_role(Role.GALLERY if chosen[r.person_id] == r.clothes_group_id else Role.QUERY))
    return out


def partition(records: Sequence[SampleRecord], train_fraction: float, seed: int) -> list[SampleRecord]:
    """Vertical then horizontal partition.

    Training identities are also split into query/gallery roles so that the
    head is trained on the same (person, template) / (person, patch) pairing
    it sees at test time.
    """
    return horizontal_partition(vertical_partition(records, train_fraction, seed), seed)
