"""End-to-end composition: generate, partition, train, embed, evaluate."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import LabeledEmbedding, Role, Split, make_rng
from .dataset import ReidData, SynthConfig, partition, synth_generate
from .evaluation import EvalReport, evaluate_arrays
from .head import DEFAULT_EMBED_DIM, DEFAULT_REDUCED_CHANNELS, HeadParams, head_forward
from .losses import LossConfig
from .rerank import RerankConfig
from .trainer import TrainConfig, TrainReport, train
from .xqda import DEFAULT_MAX_R, DEFAULT_RIDGE, XqdaModel, xqda_fit_arrays

DEFAULT_TRAIN_FRACTION = 0.5


def embed(data: ReidData, params: HeadParams, drop: Optional[str] = None, batch: int = 512) -> np.ndarray:
    """Fused embeddings for every sample, using each sample's role-appropriate clothes input."""
    clothes = data.clothes_inputs()
    out = []
    for s in range(0, len(data), batch):
        f, _, _, _ = head_forward(data.person_maps[s:s + batch], clothes[s:s + batch], params, drop=drop)
        out.append(f)
    return np.concatenate(out) if out else np.empty((0, params.fusion.dim))


def labeled(data: ReidData, vectors: np.ndarray, idx) -> list[LabeledEmbedding]:
    return [LabeledEmbedding(data.records[i], vectors[i]) for i in idx]


def evaluate_split(data: ReidData, vectors: np.ndarray, metric: str = "euclid",
                   model: Optional[XqdaModel] = None, rerank: Optional[RerankConfig] = None,
                   split: Split = Split.TEST) -> EvalReport:
    """Query/gallery evaluation over one split, ties broken by gallery sample id."""
    q = data.indices(split=split, role=Role.QUERY)
    g = data.indices(split=split, role=Role.GALLERY)
    pids = np.array([r.person_id for r in data.records])
    sids = [data.records[i].sample_id for i in g]
    return evaluate_arrays(vectors[q], vectors[g], pids[q], pids[g], metric=metric, model=model,
                           rerank=rerank, gallery_keys=sids)


def fit_xqda_on_split(data: ReidData, vectors: np.ndarray, split: Split = Split.TRAIN,
                      max_r: int = DEFAULT_MAX_R, ridge: float = DEFAULT_RIDGE) -> XqdaModel:
    idx = data.indices(split=split)
    return xqda_fit_arrays(vectors[idx], [data.records[i].person_id for i in idx], max_r, ridge)


@dataclass
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    rerank: RerankConfig = field(default_factory=RerankConfig)
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    embed_dim: int = DEFAULT_EMBED_DIM
    reduced_channels: int = DEFAULT_REDUCED_CHANNELS
    xqda_max_r: int = DEFAULT_MAX_R
    xqda_ridge: float = DEFAULT_RIDGE
    seed: int = 0


@dataclass
class ExperimentResult:
    data: ReidData
    report: TrainReport
    reports: dict[str, EvalReport]
    xqda: XqdaModel


def prepare_data(config: ExperimentConfig) -> ReidData:
    data = synth_generate(config.synth)
    return data.with_records(partition(data.records, config.train_fraction, config.seed))


def init_head(config: ExperimentConfig, depth: int) -> HeadParams:
    return HeadParams.init(depth, make_rng(config.seed, "head-init"), n=config.reduced_channels,
                           dim=config.embed_dim)


def run_experiment(config: ExperimentConfig = ExperimentConfig(), data: Optional[ReidData] = None
                   ) -> ExperimentResult:
    """Train the head and evaluate every feature / similarity variant on the test split.

    Report keys: ``euclid``, ``euclid+rr``, ``xqda``, ``xqda+rr`` for the fused
    feature, ``biometric`` and ``clothes`` for the single-branch variants
    (the other branch zeroed before fusion), and ``untrained`` for the
    initial head.
    """
    if data is None:
        data = prepare_data(config)
    params0 = init_head(config, data.person_maps.shape[-1])
    report = train(data, params0, config=config.train, loss_config=config.loss)
    f = embed(data, report.params)
    model = fit_xqda_on_split(data, f, max_r=config.xqda_max_r, ridge=config.xqda_ridge)
    reports = {
        "euclid": evaluate_split(data, f),
        "euclid+rr": evaluate_split(data, f, rerank=config.rerank),
        "xqda": evaluate_split(data, f, "xqda", model),
        "xqda+rr": evaluate_split(data, f, "xqda", model, rerank=config.rerank),
        "biometric": evaluate_split(data, embed(data, report.params, drop="clothes")),
        "clothes": evaluate_split(data, embed(data, report.params, drop="biometric")),
        "untrained": evaluate_split(data, embed(data, params0)),
    }
    return ExperimentResult(data, report, reports, model)
