"""Mini-batch momentum SGD over the head and the two classifiers.

Batches follow PK sampling: ``P`` identities, ``K`` samples each. The learning
rate is a step schedule, ``lr_initial`` before ``decay_epoch`` and
``lr_after_decay`` from then on.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import SampleRecord, Split, make_rng
from .dataset import ReidData
from .errors import DivergedLossError, InsufficientIdentitiesError, InvalidConfigError
from .head import HeadParams, head_backward, head_forward
from .losses import LossConfig, combined_loss, init_classifier


@dataclass(frozen=True)
class TrainConfig:
    # desk-scale defaults: 30 epochs, decay at 40% of the run, same 7:1 lr ratio
    # as the full-scale schedule
    epochs: int = 30
    lr_initial: float = 0.035
    lr_after_decay: float = 0.005
    decay_epoch: int = 12
    momentum: float = 0.9
    persons_per_batch: int = 8
    samples_per_person: int = 4
    steps_per_epoch: Optional[int] = None
    seed: int = 0

    @classmethod
    def full_schedule(cls, **overrides) -> "TrainConfig":
        """The full-scale schedule (lr 0.00035 -> 0.00005 at epoch 40 of 100)."""
        base = dict(epochs=100, lr_initial=0.00035, lr_after_decay=0.00005, decay_epoch=40)
        base.update(overrides)
        return cls(**base)

    def validate(self):
        if self.epochs < 0 or not 0 <= self.decay_epoch <= self.epochs:
            raise InvalidConfigError("need 0 <= decay_epoch <= epochs")
        if not (self.lr_initial > 0 and self.lr_after_decay > 0):
            raise InvalidConfigError("learning rates must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidConfigError("momentum must lie in [0, 1)")
        if self.persons_per_batch < 2 or self.samples_per_person < 1:
            raise InvalidConfigError("PK sampling needs P >= 2 and K >= 1")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise InvalidConfigError("steps_per_epoch must be positive")
        return self

    def lr_at(self, epoch: int) -> float:
        return self.lr_initial if epoch < self.decay_epoch else self.lr_after_decay


class MomentumSGD:
    """Plain (heavy-ball) momentum: ``v <- mu v - lr g``; ``theta <- theta + v``.

    Parameters are updated in place.
    """

    def __init__(self, params: dict[str, np.ndarray], momentum: float):
        self.params = params
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float):
        for k, p in self.params.items():
            v = self.velocity[k]
            v *= self.momentum
            v -= lr * grads[k]
            p += v


def pk_sample(records: Sequence[SampleRecord], P: int, K: int, seed: int, epoch: int, step: int,
              indices: Optional[Sequence[int]] = None) -> list[str]:
    """Sample ``P`` distinct identities and ``K`` samples of each.

    Within an identity, samples are drawn without replacement when it has at
    least ``K`` of them and with replacement otherwise. The batch is grouped
    by identity and is a pure function of ``(seed, epoch, step)``.

    Args:
        records: the candidate pool (usually the training split).
        indices: optional subset of ``records`` to draw from.

    Returns:
        sample ids of the batch, ``P * K`` of them.
    """
    pool = [records[i] for i in indices] if indices is not None else list(records)
    by_id: dict[str, list[str]] = {}
    for r in pool:
        by_id.setdefault(r.person_id, []).append(r.sample_id)
    ids = sorted(by_id)
    if len(ids) < P:
        raise InsufficientIdentitiesError(f"need {P} identities, pool has {len(ids)}")
    rng = make_rng(seed, "pk", epoch, step)
    batch = []
    for j in rng.choice(len(ids), size=P, replace=False):
        members = by_id[ids[j]]
        pick = rng.choice(len(members), size=K, replace=len(members) < K)
        batch.extend(members[k] for k in pick)
    return batch


@dataclass
class Classifiers:
    fused: np.ndarray  # (L, d)
    biometric: np.ndarray  # (L, D)

    @classmethod
    def init(cls, n_classes: int, dim: int, depth: int, rng: np.random.Generator) -> "Classifiers":
        return cls(init_classifier(n_classes, dim, rng), init_classifier(n_classes, depth, rng))


@dataclass
class TrainReport:
    loss_trace: list[float]
    params: HeadParams
    classifiers: Classifiers
    seconds: float
    term_trace: list[dict] = field(default_factory=list)


def _param_dict(params: HeadParams, clf: Classifiers) -> dict[str, np.ndarray]:
    d = params.to_dict()
    d["classifier.fused"] = clf.fused
    d["classifier.biometric"] = clf.biometric
    return d


def train_step_gradients(params: HeadParams, clf: Classifiers, person_maps, clothes_maps, labels,
                         loss_config: LossConfig):
    """Loss and gradients for one batch, keyed like the trainer's parameter dict."""
    f, f_B, _, cache = head_forward(person_maps, clothes_maps, params)
    total, g = combined_loss(f, f_B, labels, clf.fused, clf.biometric, loss_config)
    hg = head_backward(g["fused"], cache, grad_fB=g["biometric"])
    grads = hg.params_dict()
    grads["classifier.fused"] = g["params_f"]
    grads["classifier.biometric"] = g["params_fb"]
    return total, grads, g["terms"]


def optimize(params: dict[str, np.ndarray], loss_and_grad: Callable[[int, int], tuple[float, dict]],
             config: TrainConfig, steps_per_epoch: int):
    """Generic momentum-SGD loop; returns the per-epoch mean loss trace."""
    opt = MomentumSGD(params, config.momentum)
    trace = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        losses = []
        for step in range(steps_per_epoch):
            loss, grads = loss_and_grad(epoch, step)
            if not np.isfinite(loss):
                raise DivergedLossError(f"non-finite loss at epoch {epoch}, step {step}")
            losses.append(loss)
            opt.step(grads, lr)
        trace.append(float(np.mean(losses)))
    return trace


def train(data: ReidData, params: HeadParams, classifiers: Optional[Classifiers] = None,
          config: TrainConfig = TrainConfig(), loss_config: LossConfig = LossConfig()) -> TrainReport:
    """Train the head (and classifiers) on the training split of ``data``.

    ``params`` and ``classifiers`` are copied, never modified. Classifiers
    are created from ``config.seed`` when not given.
    """
    config.validate()
    start = time.perf_counter()
    train_idx = data.indices(split=Split.TRAIN)
    if train_idx.size == 0:
        raise InvalidConfigError("dataset has no training split")
    records = [data.records[i] for i in train_idx]
    person_ids = sorted({r.person_id for r in records})
    label_of = {p: j for j, p in enumerate(person_ids)}
    row_of = {data.records[i].sample_id: i for i in train_idx}

    params = HeadParams.from_dict({k: v.copy() for k, v in params.to_dict().items()})
    if classifiers is None:
        classifiers = Classifiers.init(len(person_ids), params.fusion.dim, params.mask.depth,
                                       make_rng(config.seed, "classifier"))
    else:
        classifiers = Classifiers(classifiers.fused.copy(), classifiers.biometric.copy())
    clothes = data.clothes_inputs()
    P, K = config.persons_per_batch, config.samples_per_person
    steps = config.steps_per_epoch or max(1, -(-len(records) // (P * K)))
    terms = []

    def loss_and_grad(epoch, step):
        batch = pk_sample(records, P, K, config.seed, epoch, step)
        rows = np.array([row_of[s] for s in batch])
        labels = np.array([label_of[data.records[i].person_id] for i in rows])
        total, grads, t = train_step_gradients(params, classifiers, data.person_maps[rows],
                                               clothes[rows], labels, loss_config)
        terms.append(t)
        return total, grads

    trace = optimize(_param_dict(params, classifiers), loss_and_grad, config, steps)
    return TrainReport(trace, params, classifiers, time.perf_counter() - start, terms)
