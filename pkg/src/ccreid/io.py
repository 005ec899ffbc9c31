"""File formats: binary feature files, manifests, parameter archives, configs and reports.

Feature files hold float32 arrays behind a small header::

    magic     4 bytes   b"RIDV" (vectors, dims = count, d) or b"RIDM" (maps, dims = count, H, W, D)
    version   u32 LE
    dims      u64 LE each, 2 or 4 of them depending on the magic
    payload   f32 LE, row-major

Manifests are tab-separated, one record per line, columns ``sample_id,
person_id, clothes_group_id, split, role, clothes_source``; unset fields are
written as ``-``. Lines starting with ``#`` are comments.
"""
from __future__ import annotations

import io
import struct
import zipfile
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from .association import AssociationConfig
from .core import ClothesSource, Role, SampleRecord, Split
from .errors import (BadMagicError, InvalidConfigError, MalformedManifestError, NonFiniteValueError,
                     ShapeMismatchError, TruncatedFileError)
from .evaluation import EvalReport, REPORT_RANKS
from .head import HeadParams
from .pipeline import ExperimentConfig
from .xqda import XqdaModel

PathLike = Union[str, Path]

VECTOR_MAGIC = b"RIDV"
MAP_MAGIC = b"RIDM"
FORMAT_VERSION = 1
_NDIMS = {VECTOR_MAGIC: 2, MAP_MAGIC: 4}

MANIFEST_COLUMNS = ("sample_id", "person_id", "clothes_group_id", "split", "role", "clothes_source")
UNSET = "-"


# --- feature files -----------------------------------------------------------

def encode_features(x) -> bytes:
    """Serialize an ``(N, d)`` or ``(N, H, W, D)`` array."""
    x = np.asarray(x)
    magic = {2: VECTOR_MAGIC, 4: MAP_MAGIC}.get(x.ndim)
    if magic is None:
        raise ShapeMismatchError(f"feature files hold 2-D or 4-D arrays, got {x.ndim}-D")
    with np.errstate(over="ignore"):  # overflow shows up as inf and is rejected below
        payload = np.ascontiguousarray(x, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise NonFiniteValueError("features must be finite at 32-bit precision")
    header = magic + struct.pack("<I", FORMAT_VERSION) + struct.pack(f"<{x.ndim}Q", *x.shape)
    return header + payload.tobytes()


def decode_features(buf: bytes) -> np.ndarray:
    """Inverse of :func:`encode_features`; returns a float32 array."""
    magic = bytes(buf[:4])
    if magic not in _NDIMS:
        raise BadMagicError(f"unknown magic {magic!r}")
    ndims = _NDIMS[magic]
    head = 8 + 8 * ndims
    if len(buf) < head:
        raise TruncatedFileError(f"header needs {head} bytes, file has {len(buf)}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise BadMagicError(f"unsupported version {version}")
    dims = struct.unpack_from(f"<{ndims}Q", buf, 8)
    expected = head + 4 * int(np.prod(dims, dtype=np.uint64))
    if len(buf) < expected:
        raise TruncatedFileError(f"payload needs {expected - head} bytes, file has {len(buf) - head}")
    if len(buf) > expected:
        raise TruncatedFileError(f"{len(buf) - expected} trailing bytes after the payload")
    x = np.frombuffer(buf, dtype="<f4", offset=head, count=expected // 4 - head // 4).reshape(dims)
    if not np.all(np.isfinite(x)):
        raise NonFiniteValueError("file contains non-finite values")
    return x.astype(np.float32)


def write_features(path: PathLike, x) -> None:
    Path(path).write_bytes(encode_features(x))


def read_features(path: PathLike) -> np.ndarray:
    return decode_features(Path(path).read_bytes())


# --- manifests ---------------------------------------------------------------

def format_manifest(records: Sequence[SampleRecord]) -> str:
    lines = ["#" + "\t".join(MANIFEST_COLUMNS)]
    for r in records:
        values = [r.sample_id, r.person_id, r.clothes_group_id, r.split, r.role, r.clothes_source]
        lines.append("\t".join(UNSET if v is None else getattr(v, "value", v) for v in values))
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> list[SampleRecord]:
    records = []
    seen = set()
    for n, line in enumerate(text.splitlines(), 1):
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != len(MANIFEST_COLUMNS):
            raise MalformedManifestError(f"line {n}: expected {len(MANIFEST_COLUMNS)} columns, got {len(cols)}")
        sid, pid, gid, split, role, source = cols
        if sid in seen:
            raise MalformedManifestError(f"line {n}: duplicate sample_id {sid!r}")
        seen.add(sid)
        try:
            records.append(SampleRecord(
                sid, pid, gid,
                None if split == UNSET else Split(split),
                None if role == UNSET else Role(role),
                None if source == UNSET else ClothesSource(source)))
        except ValueError as exc:
            raise MalformedManifestError(f"line {n}: {exc}") from exc
    return records


def write_manifest(path: PathLike, records: Sequence[SampleRecord]) -> None:
    Path(path).write_text(format_manifest(records))


def read_manifest(path: PathLike) -> list[SampleRecord]:
    return parse_manifest(Path(path).read_text())


# --- array archives ----------------------------------------------------------

_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_arrays(path: PathLike, arrays: Mapping[str, np.ndarray]) -> None:
    """Write an ``.npz`` archive whose bytes depend only on the arrays.

    Entries are stored in the given order with a fixed timestamp, so equal
    inputs give byte-identical files; ``numpy.load`` reads them back.
    """
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def load_arrays(path: PathLike) -> dict[str, np.ndarray]:
    with np.load(path, allow_pickle=False) as z:
        return {k: z[k] for k in z.files}


def save_head(path: PathLike, params: HeadParams) -> None:
    save_arrays(path, params.to_dict())


def load_head(path: PathLike) -> HeadParams:
    return HeadParams.from_dict(load_arrays(path))


def save_xqda(path: PathLike, model: XqdaModel) -> None:
    save_arrays(path, {"projection": model.projection, "metric": model.metric,
                       "kept_ratios": model.kept_ratios})


def load_xqda(path: PathLike) -> XqdaModel:
    a = load_arrays(path)
    return XqdaModel(a["projection"], a["metric"], a["kept_ratios"])


# --- run configuration -------------------------------------------------------

@dataclass
class RunConfig:
    """Every tunable setting, addressed as ``section.field`` in config files.

    Sections: ``synth``, ``train``, ``loss``, ``rerank``, ``experiment`` (the
    scalar fields of the experiment config) and ``association``. The single
    top-level ``seed`` feeds every stage.
    """

    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    seed: int = 0

    def seeded(self) -> "RunConfig":
        """Copy with ``seed`` pushed into every sub-config that carries one."""
        e = self.experiment
        exp = replace(e, seed=self.seed, synth=replace(e.synth, seed=self.seed),
                      train=replace(e.train, seed=self.seed))
        return replace(self, experiment=exp)


_SUBSECTIONS = ("synth", "train", "loss", "rerank")
# config-file spelling -> field name, where they differ
_ALIASES = {("rerank", "lambda"): "lam"}
_KEY_NAMES = {(s, f): k for (s, k), f in _ALIASES.items()}


def _section_objects(cfg: RunConfig) -> dict[str, Any]:
    out = {name: getattr(cfg.experiment, name) for name in _SUBSECTIONS}
    out["experiment"] = cfg.experiment
    out["association"] = cfg.association
    return out


def _settable(obj) -> list[str]:
    return [f.name for f in fields(obj)
            if f.name != "seed" and f.name not in _SUBSECTIONS]


def _parse_value(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        v = float(text)
        if not np.isfinite(v):
            raise ValueError(f"not a finite number: {text!r}")
        return v
    if isinstance(default, tuple):
        parts = [p for p in text.split(",") if p.strip()]
        if len(parts) != len(default):
            raise ValueError(f"expected {len(default)} comma-separated values, got {text!r}")
        return tuple(_parse_value(p, d) for p, d in zip(parts, default))
    if isinstance(default, str):
        return text
    if default is None:
        return None if text.lower() == "none" else int(text)
    raise ValueError(f"unsupported setting type {type(default).__name__}")


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def parse_run_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments allowed) over ``base``.

    Raises:
        InvalidConfigError: unknown key, malformed line or value, or a
            resulting config that fails validation.
    """
    cfg = base or RunConfig()
    updates: dict[str, dict[str, Any]] = {}
    seed = cfg.seed
    sections = _section_objects(cfg)
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key == "seed":
                seed = int(value)
                if seed < 0:
                    raise ValueError("seed must be nonnegative")
                continue
            section, _, name = key.partition(".")
            name = _ALIASES.get((section, name), name)
            if (section, name) in _KEY_NAMES and key != f"{section}.{_KEY_NAMES[section, name]}":
                raise InvalidConfigError(f"line {n}: unknown key {key!r}")
            obj = sections.get(section)
            if obj is None or name not in _settable(obj):
                raise InvalidConfigError(f"line {n}: unknown key {key!r}")
            updates.setdefault(section, {})[name] = _parse_value(value, getattr(obj, name))
        except InvalidConfigError:
            raise
        except ValueError as exc:
            raise InvalidConfigError(f"line {n}: bad value for {key}: {exc}") from exc
    return build_run_config(cfg, updates, seed)


def build_run_config(cfg: RunConfig, updates: Mapping[str, Mapping[str, Any]], seed: int) -> RunConfig:
    try:
        sub = {s: replace(getattr(cfg.experiment, s), **updates.get(s, {})) for s in _SUBSECTIONS}
        exp = replace(cfg.experiment, **updates.get("experiment", {}), **sub)
        out = RunConfig(exp, replace(cfg.association, **updates.get("association", {})), seed).seeded()
        validate_run_config(out)
    except (TypeError, ValueError) as exc:
        raise InvalidConfigError(str(exc)) from exc
    return out


def validate_run_config(cfg: RunConfig) -> None:
    e = cfg.experiment
    e.synth.validate()
    e.train.validate()
    cfg.association.validate()
    if not 0 < e.train_fraction < 1:
        raise InvalidConfigError("experiment.train_fraction must lie in (0, 1)")
    for name in ("embed_dim", "reduced_channels", "xqda_max_r"):
        if getattr(e, name) < 1:
            raise InvalidConfigError(f"experiment.{name} must be positive")
    if not (np.isfinite(e.xqda_ridge) and e.xqda_ridge >= 0):
        raise InvalidConfigError("experiment.xqda_ridge must be nonnegative")


def format_run_config(cfg: RunConfig) -> str:
    """Every setting as ``key = value``; parsing the result restores ``cfg``."""
    lines = [f"seed = {cfg.seed}"]
    for section, obj in _section_objects(cfg).items():
        for name in _settable(obj):
            key = _KEY_NAMES.get((section, name), name)
            lines.append(f"{section}.{key} = {_format_value(getattr(obj, name))}")
    return "\n".join(lines) + "\n"


def read_run_config(path: Optional[PathLike], seed: Optional[int] = None) -> RunConfig:
    cfg = parse_run_config(Path(path).read_text()) if path is not None else RunConfig().seeded()
    if seed is not None:
        cfg = build_run_config(cfg, {}, seed)
    return cfg


# --- reports -----------------------------------------------------------------

def format_report(reports: Sequence[EvalReport], extra: Optional[Mapping[str, Any]] = None) -> str:
    """Fixed-width table (percent) followed by ``key=value`` lines (fractions).

    Machine lines are prefixed with the report's metric label, e.g.
    ``euclid.mAP=0.512345``.
    """
    head = f"{'metric':<12}{'mAP':>8}" + "".join(f"{'top-' + str(k):>8}" for k in REPORT_RANKS)
    lines = [head]
    for r in reports:
        row = f"{r.metric:<12}{100 * r.mAP:>8.2f}"
        row += "".join(f"{100 * r.top(k):>8.2f}" for k in REPORT_RANKS if k <= len(r.cmc))
        lines.append(row)
    lines.append("")
    for r in reports:
        for k, v in r.as_dict().items():
            if k != "metric":
                lines.append(f"{r.metric}.{k}={v:.6f}")
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, str]:
    """The ``key=value`` lines of a report."""
    out = {}
    for line in text.splitlines():
        if "=" in line and not line.startswith(" "):
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def format_plot_data(report: EvalReport) -> str:
    """Tab-separated ``rank, cmc`` rows, one per rank."""
    lines = ["rank\tcmc"]
    lines += [f"{i + 1}\t{v:.6f}" for i, v in enumerate(report.cmc)]
    return "\n".join(lines) + "\n"
