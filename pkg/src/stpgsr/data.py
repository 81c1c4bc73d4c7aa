"""Dataset files, synthetic pair generation, and persistence.

Matrices are CSV (n rows of n comma-separated decimals, 17 significant
digits so float64 round-trips bitwise); manifests, reports and checkpoints
are JSON. All writes go through a temp-file-then-rename so readers never see
partial files. Loading validates every connectome invariant; nothing is
silently repaired.

The synthetic generator replaces an external imaging pipeline: each
high-resolution sample is a planted-modular weighted graph, and the
low-resolution counterpart is an aggregation through one dataset-level
column-stochastic map (shared across samples so the mapping is learnable),
plus optional symmetric noise.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .graphs import validate_connectome
from .models import build_model, MODEL_KINDS

CHECKPOINT_FORMAT = "stpgsr-checkpoint"
CHECKPOINT_VERSION = 1
MANIFEST_FORMAT = "stpgsr-manifest"


def _atomic_write_text(path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_matrix(weights: np.ndarray, path):
    w = validate_connectome(weights, str(path))
    lines = [",".join(f"{x:.17g}" for x in row) for row in w]
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    rows = []
    with open(path) as fh:
        raw_lines = [line for line in (l.strip() for l in fh) if line]
    if not raw_lines:
        raise ValidationError(f"{path}: empty matrix file")
    width = None
    for i, line in enumerate(raw_lines):
        fields = line.split(",")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise ValidationError(
                f"{path}: ragged row {i}: {len(fields)} fields, expected {width}"
            )
        row = []
        for j, f in enumerate(fields):
            try:
                row.append(float(f))
            except ValueError:
                raise ValidationError(
                    f"{path}: non-numeric field at row {i}, col {j}: {f!r}"
                ) from None
        rows.append(row)
    if len(rows) != width:
        raise ValidationError(f"{path}: {len(rows)} rows x {width} cols is not square")
    return validate_connectome(np.array(rows), str(path))


@dataclass
class SyntheticConfig:
    samples: int = 30
    n_s: int = 20
    n_t: int = 30
    noise: float = 0.05
    modules: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ValidationError("samples must be >= 1")
        if not 2 <= self.n_s < self.n_t:
            raise ValidationError(
                f"need 2 <= n_s < n_t, got n_s={self.n_s}, n_t={self.n_t}"
            )
        if not 0.0 <= self.noise < 1.0:
            raise ValidationError(f"noise must be in [0, 1), got {self.noise}")
        if self.modules < 1:
            raise ValidationError("modules must be >= 1")


WITHIN_BAND = (0.65, 1.0)
BETWEEN_BAND = (0.0, 0.25)


def _symmetric_uniform(rng, n, low, high):
    out = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    vals = rng.uniform(low, high, size=iu[0].size)
    out[iu] = vals
    out.T[iu] = vals
    return out


def _minmax_offdiag(w: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(w.shape[0], k=1)
    vals = w[iu]
    lo, hi = vals.min(), vals.max()
    out = np.zeros_like(w)
    if hi > lo:
        scaled = (vals - lo) / (hi - lo)
        out[iu] = scaled
        out.T[iu] = scaled
    return out


def _planted_hr(rng, n_t: int, module_of: np.ndarray) -> np.ndarray:
    lo = _symmetric_uniform(rng, n_t, *BETWEEN_BAND)
    hi = _symmetric_uniform(rng, n_t, *WITHIN_BAND)
    same = module_of[:, None] == module_of[None, :]
    w = np.where(same, hi, lo)
    np.fill_diagonal(w, 0.0)
    return _minmax_offdiag(w)


def _aggregation_map(rng, n_t: int, n_s: int) -> np.ndarray:
    """Column-stochastic soft assignment of target nodes to source nodes."""
    primary = rng.permutation(np.arange(n_t) % n_s)
    p = rng.uniform(0.05, 0.30, size=(n_t, n_s))
    p[np.arange(n_t), primary] += 1.0
    return p / p.sum(axis=0, keepdims=True)


def generate_synthetic(cfg: SyntheticConfig, out_dir) -> dict:
    """Write LR/HR CSV pairs plus a manifest; pure function of ``cfg``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    module_of = rng.permutation(np.arange(cfg.n_t) % cfg.modules)
    aggregation = _aggregation_map(rng, cfg.n_t, cfg.n_s)

    samples = []
    for k in range(cfg.samples):
        a_t = _planted_hr(rng, cfg.n_t, module_of)
        mixed = aggregation.T @ a_t @ aggregation
        a_s = _minmax_offdiag(mixed)
        if cfg.noise > 0:
            a_s = a_s + cfg.noise * _symmetric_uniform(rng, cfg.n_s, -1.0, 1.0)
            a_s = np.clip(a_s, 0.0, 1.0)
            np.fill_diagonal(a_s, 0.0)
        sample_id = f"s{k:03d}"
        lr_name = f"{sample_id}_lr.csv"
        hr_name = f"{sample_id}_hr.csv"
        write_matrix(a_s, out_dir / lr_name)
        write_matrix(a_t, out_dir / hr_name)
        samples.append({"id": sample_id, "lr": lr_name, "hr": hr_name})

    manifest = {
        "format": MANIFEST_FORMAT,
        "kind": "synthetic-planted-modular",
        "n_s": cfg.n_s,
        "n_t": cfg.n_t,
        "seed": cfg.seed,
        "noise": cfg.noise,
        "module_count": cfg.modules,
        "module_assignment": [int(c) for c in module_of],
        "samples": samples,
    }
    _atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from None
    for key in ("n_s", "n_t", "seed", "samples"):
        if key not in manifest:
            raise ValidationError(f"{path}: manifest missing key {key!r}")
    return manifest


def load_dataset(manifest_path):
    """Read every sample pair, rejecting files that violate the invariants."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    base = manifest_path.parent
    dataset = []
    for rec in manifest["samples"]:
        a_s = read_matrix(base / rec["lr"])
        a_t = read_matrix(base / rec["hr"])
        if a_s.shape[0] != manifest["n_s"]:
            raise ValidationError(
                f"{rec['lr']}: has {a_s.shape[0]} nodes, manifest says {manifest['n_s']}"
            )
        if a_t.shape[0] != manifest["n_t"]:
            raise ValidationError(
                f"{rec['hr']}: has {a_t.shape[0]} nodes, manifest says {manifest['n_t']}"
            )
        dataset.append((a_s, a_t))
    return manifest, dataset


# ---------------------------------------------------------------------------
# checkpoints and reports


def write_checkpoint(model, path):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_kind": model.kind,
        "n_s": model.n_s,
        "n_t": model.n_t,
        "seed": model.seed,
        "params": {
            p.name: {"shape": list(p.values.shape), "values": p.values.ravel().tolist()}
            for p in model.parameters()
        },
    }
    _atomic_write_text(path, json.dumps(payload) + "\n")


def read_checkpoint(path):
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from None
    for key in ("format", "version", "model_kind", "n_s", "n_t", "seed", "params"):
        if key not in payload:
            raise ValidationError(f"{path}: checkpoint missing key {key!r}")
    if payload["format"] != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a checkpoint file")
    if payload["model_kind"] not in MODEL_KINDS:
        raise ValidationError(f"{path}: unknown model kind {payload['model_kind']!r}")
    model = build_model(
        payload["model_kind"], payload["n_s"], payload["n_t"], payload["seed"]
    )
    stored = payload["params"]
    for p in model.parameters():
        if p.name not in stored:
            raise ValidationError(f"{path}: missing parameter {p.name!r}")
        rec = stored[p.name]
        if tuple(rec["shape"]) != p.values.shape:
            raise ValidationError(
                f"{path}: parameter {p.name!r} has shape {rec['shape']}, "
                f"expected {list(p.values.shape)}"
            )
        p.values[...] = np.array(rec["values"]).reshape(p.values.shape)
    extra = set(stored) - {p.name for p in model.parameters()}
    if extra:
        raise ValidationError(f"{path}: unexpected parameters {sorted(extra)}")
    return model


def _strip_models(report: dict) -> dict:
    out = dict(report)
    out["folds"] = [
        {k: v for k, v in fold.items() if k not in ("model", "history")}
        for fold in report["folds"]
    ]
    return out


def write_report(report: dict, path):
    serializable = _strip_models(report) if "folds" in report else report
    _atomic_write_text(path, json.dumps(serializable, indent=2) + "\n")


def write_report_csv(report: dict, path):
    """One row per sample x metric, for external plotting."""
    lines = ["model,fold,sample,metric,value"]
    model_kind = report.get("model_kind", "")
    for fold in report.get("folds", []):
        for entry in fold["per_sample"]:
            for metric, value in entry["metrics"].items():
                rendered = "" if value is None else f"{value:.17g}"
                lines.append(
                    f"{model_kind},{fold['fold']},{entry['sample']},{metric},{rendered}"
                )
    _atomic_write_text(path, "\n".join(lines) + "\n")


def write_history_csv(history, path):
    lines = ["epoch,loss"]
    for epoch, loss in enumerate(history.epoch_loss):
        lines.append(f"{epoch},{loss:.17g}")
    _atomic_write_text(path, "\n".join(lines) + "\n")
