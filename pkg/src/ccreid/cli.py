"""Command-line entry point.

A dataset directory written by ``generate`` holds::

    manifest.tsv     unpartitioned records, row order of every map file
    person.ridm      person feature maps
    patch.ridm       detected clothes patches
    template.ridm    clothes templates (each sample's own group)
    face.ridv        face-proxy descriptors
    biometric.ridv   identity latents, rows in sorted person_id order
    clothes.ridv     clothes-group latents, rows in sorted (person_id, group) order

Later stages take a (partitioned) manifest whose rows follow the same order.
Feature files written by ``embed`` are row-aligned with the manifest too.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io as rio
from .association import associate
from .core import Role, Split, avg_pool
from .dataset import ReidData, horizontal_partition, synth_generate, vertical_partition
from .errors import ReidError, ShapeMismatchError, UsageError
from .evaluation import evaluate_arrays
from .pipeline import embed, init_head
from .rerank import RerankConfig
from .trainer import train
from .xqda import XqdaModel, xqda_fit_arrays

MAP_FILES = {"person": "person.ridm", "patch": "patch.ridm", "template": "template.ridm"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--config", type=Path, default=None, help="key = value settings file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ccreid", description="Clothes-changing re-identification toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic dataset directory")
    p.add_argument("--out", type=Path, required=True)
    _common(p)

    p = sub.add_parser("partition", help="train/test split by identity, query/gallery by clothes")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _common(p)

    p = sub.add_parser("train", help="train the head on the train split")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True, help="partitioned manifest")
    p.add_argument("--out", type=Path, required=True, help="head parameter archive (.npz)")
    p.add_argument("--report", type=Path, default=None, help="loss trace as key=value lines")
    _common(p)

    p = sub.add_parser("embed", help="fused embeddings for every sample")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True, help="partitioned manifest")
    p.add_argument("--head", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="vector file (.ridv)")
    p.add_argument("--drop", choices=("biometric", "clothes"), default=None,
                   help="zero one branch before fusion")
    _common(p)

    p = sub.add_parser("xqda-fit", help="fit XQDA on the train split embeddings")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _common(p)

    p = sub.add_parser("evaluate", help="mAP and CMC on the test split")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--metric", choices=("euclid", "xqda"), default="euclid")
    p.add_argument("--model", type=Path, default=None, help="XQDA model for --metric xqda")
    p.add_argument("--rerank", action="store_true")
    p.add_argument("--out", type=Path, default=None, help="also write the report here")
    p.add_argument("--emit-plot-data", type=Path, default=None, metavar="PATH",
                   help="write rank/CMC rows (tab-separated)")
    _common(p)

    p = sub.add_parser("associate", help="cluster, face-link, verify and merge unlabeled samples")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--manifest", type=Path, default=None, help="defaults to the dataset manifest")
    p.add_argument("--features", type=Path, default=None,
                   help="vectors to cluster; defaults to average-pooled person maps")
    p.add_argument("--out", type=Path, default=None, help="sample_id -> identity assignments")
    _common(p)

    p = sub.add_parser("sweep-rerank", help="re-ranking mAP over a (k1, k2, lambda) grid")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--metric", choices=("euclid", "xqda"), default="euclid")
    p.add_argument("--model", type=Path, default=None)
    p.add_argument("--k1", default="10,20,30")
    p.add_argument("--k2", default="3,6")
    p.add_argument("--lambda", dest="lam", default="0.1,0.3,0.5")
    p.add_argument("--out", type=Path, default=None)
    _common(p)
    return parser


# --- helpers ------------------------------------------------------------------

def load_data(data_dir: Path, manifest: Optional[Path] = None) -> ReidData:
    """Read a dataset directory, optionally with a re-labeled manifest of the same samples."""
    base = rio.read_manifest(data_dir / "manifest.tsv")
    records = rio.read_manifest(manifest) if manifest is not None else base
    if [r.sample_id for r in records] != [r.sample_id for r in base]:
        raise ShapeMismatchError(f"{manifest} does not list the samples of {data_dir} in order")
    maps = {k: rio.read_features(data_dir / f).astype(np.float64) for k, f in MAP_FILES.items()}
    face = rio.read_features(data_dir / "face.ridv").astype(np.float64)
    for name, arr in list(maps.items()) + [("face", face)]:
        if arr.shape[0] != len(records):
            raise ShapeMismatchError(f"{name} file has {arr.shape[0]} rows, manifest has {len(records)}")
    return ReidData(records, maps["person"], maps["patch"], maps["template"], face)


def _aligned_features(features: Path, records) -> np.ndarray:
    X = rio.read_features(features).astype(np.float64)
    if X.ndim != 2 or X.shape[0] != len(records):
        raise ShapeMismatchError(f"{features} has shape {X.shape}, manifest has {len(records)} rows")
    return X


def _test_arrays(X, records):
    q = [i for i, r in enumerate(records) if r.split is Split.TEST and r.role is Role.QUERY]
    g = [i for i, r in enumerate(records) if r.split is Split.TEST and r.role is Role.GALLERY]
    if not q or not g:
        raise ShapeMismatchError("manifest has no test queries or no test gallery; run partition first")
    pids = np.array([r.person_id for r in records])
    keys = [records[i].sample_id for i in g]
    return X[q], X[g], pids[q], pids[g], keys


def _model(args) -> Optional[XqdaModel]:
    if args.metric == "xqda":
        if args.model is None:
            raise UsageError("--metric xqda needs --model")
        return rio.load_xqda(args.model)
    return None


def _emit(text: str, out: Optional[Path]):
    sys.stdout.write(text)
    if out is not None:
        out.write_text(text)


def _float_list(text: str, kind=float) -> list:
    try:
        return [kind(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad list {text!r}: {exc}") from exc


# --- commands -----------------------------------------------------------------

def cmd_generate(args, cfg: rio.RunConfig):
    data = synth_generate(cfg.experiment.synth)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    rio.write_manifest(out / "manifest.tsv", data.records)
    rio.write_features(out / "person.ridm", data.person_maps)
    rio.write_features(out / "patch.ridm", data.patch_maps)
    rio.write_features(out / "template.ridm", data.template_maps)
    rio.write_features(out / "face.ridv", data.face)
    rio.write_features(out / "biometric.ridv", data.truth.biometric)
    rio.write_features(out / "clothes.ridv", data.truth.clothes)
    n_ids = len(data.truth.person_ids)
    print(f"generated {len(data)} samples, {n_ids} identities, {len(data.truth.group_keys)} clothes groups -> {out}")


def cmd_partition(args, cfg: rio.RunConfig):
    records = rio.read_manifest(args.manifest)
    e = cfg.experiment
    records = horizontal_partition(vertical_partition(records, e.train_fraction, e.seed), e.seed)
    rio.write_manifest(args.out, records)
    n_train = len({r.person_id for r in records if r.split is Split.TRAIN})
    n_test = len({r.person_id for r in records if r.split is Split.TEST})
    print(f"partitioned {len(records)} samples: {n_train} train identities, {n_test} test identities -> {args.out}")


def cmd_train(args, cfg: rio.RunConfig):
    data = load_data(args.data, args.manifest)
    e = cfg.experiment
    params0 = init_head(e, data.person_maps.shape[-1])
    report = train(data, params0, config=e.train, loss_config=e.loss)
    rio.save_head(args.out, report.params)
    lines = [f"epoch{i}.loss={v:.6f}" for i, v in enumerate(report.loss_trace)]
    if report.loss_trace:
        lines.append(f"first_loss={report.loss_trace[0]:.6f}")
        lines.append(f"final_loss={report.loss_trace[-1]:.6f}")
    text = "\n".join(lines) + "\n"
    if args.report is not None:
        args.report.write_text(text)
    print(f"trained {len(report.loss_trace)} epochs, final loss "
          f"{report.loss_trace[-1] if report.loss_trace else float('nan'):.4f} -> {args.out}")


def cmd_embed(args, cfg: rio.RunConfig):
    data = load_data(args.data, args.manifest)
    params = rio.load_head(args.head)
    rio.write_features(args.out, embed(data, params, drop=args.drop))
    print(f"embedded {len(data)} samples -> {args.out}")


def cmd_xqda_fit(args, cfg: rio.RunConfig):
    records = rio.read_manifest(args.manifest)
    X = _aligned_features(args.features, records)
    rows = [i for i, r in enumerate(records) if r.split is Split.TRAIN]
    if not rows:
        raise ShapeMismatchError("manifest has no train split; run partition first")
    e = cfg.experiment
    model = xqda_fit_arrays(X[rows], [records[i].person_id for i in rows], e.xqda_max_r, e.xqda_ridge)
    rio.save_xqda(args.out, model)
    print(f"xqda kept {model.projection.shape[1]} of {model.dim} directions -> {args.out}")


def cmd_evaluate(args, cfg: rio.RunConfig):
    records = rio.read_manifest(args.manifest)
    Q, G, qp, gp, keys = _test_arrays(_aligned_features(args.features, records), records)
    rerank = cfg.experiment.rerank if args.rerank else None
    report = evaluate_arrays(Q, G, qp, gp, metric=args.metric, model=_model(args), rerank=rerank,
                             gallery_keys=keys)
    extra = {"queries": len(Q), "gallery": len(G)}
    if rerank is not None:
        extra.update({"rerank.k1": rerank.k1, "rerank.k2": rerank.k2, "rerank.lambda": rerank.lam})
    _emit(rio.format_report([report], extra), args.out)
    if args.emit_plot_data is not None:
        args.emit_plot_data.write_text(rio.format_plot_data(report))


def cmd_associate(args, cfg: rio.RunConfig):
    data = load_data(args.data, args.manifest)
    if args.features is not None:
        X = _aligned_features(args.features, data.records)
    else:
        X = np.stack([avg_pool(A) for A in data.person_maps])
    a = cfg.association
    truth = [r.person_id for r in data.records]
    result = associate(X, data.face, a.threshold, a.k, truth=truth, error_rate=a.error_rate, seed=cfg.seed)
    if args.out is not None:
        lines = [f"{r.sample_id}\t{int(i)}" for r, i in zip(data.records, result.identities)]
        args.out.write_text("\n".join(lines) + "\n")
    print(f"clusters={result.clusters.n_clusters}")
    print(f"candidate_links={len(result.links)}")
    print(f"verified_links={len(result.verified)}")
    print(f"identities={int(result.identities.max()) + 1 if len(result.identities) else 0}")
    print(f"true_identities={len(set(truth))}")
    print(f"pairwise_f1={result.f1:.6f}")


def cmd_sweep_rerank(args, cfg: rio.RunConfig):
    records = rio.read_manifest(args.manifest)
    Q, G, qp, gp, keys = _test_arrays(_aligned_features(args.features, records), records)
    model = _model(args)
    base = evaluate_arrays(Q, G, qp, gp, metric=args.metric, model=model, gallery_keys=keys)
    lines = [f"{'k1':>4}{'k2':>4}{'lambda':>8}{'mAP':>8}{'top-1':>8}",
             f"{'-':>4}{'-':>4}{'-':>8}{100 * base.mAP:>8.2f}{100 * base.top(1):>8.2f}"]
    kv = [f"base.mAP={base.mAP:.6f}"]
    for k1 in _float_list(args.k1, int):
        for k2 in _float_list(args.k2, int):
            for lam in _float_list(args.lam):
                rr = RerankConfig(k1, k2, lam)
                r = evaluate_arrays(Q, G, qp, gp, metric=args.metric, model=model, rerank=rr,
                                    gallery_keys=keys)
                lines.append(f"{k1:>4}{k2:>4}{lam:>8.2f}{100 * r.mAP:>8.2f}{100 * r.top(1):>8.2f}")
                kv.append(f"k1_{k1}.k2_{k2}.lambda_{lam}.mAP={r.mAP:.6f}")
    _emit("\n".join(lines + [""] + kv) + "\n", args.out)


COMMANDS = {
    "generate": cmd_generate,
    "partition": cmd_partition,
    "train": cmd_train,
    "embed": cmd_embed,
    "xqda-fit": cmd_xqda_fit,
    "evaluate": cmd_evaluate,
    "associate": cmd_associate,
    "sweep-rerank": cmd_sweep_rerank,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        cfg = rio.read_run_config(args.config, args.seed)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"ccreid: error: {exc}\n")
        return 2
    except (ReidError, ValueError, OSError) as exc:
        sys.stderr.write(f"ccreid: {type(exc).__name__}: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
