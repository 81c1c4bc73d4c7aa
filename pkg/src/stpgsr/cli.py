"""Command-line entry point for reproducible runs.

Commands: ``gen-data`` (synthetic dataset), ``train`` (cross-validated
training + metric report), ``eval`` (apply a checkpoint to a dataset),
``dual-info`` (dual-graph size/density figures), ``gradcheck`` (finite
difference suite).

Exit codes: 0 success, 2 configuration/validation error, 3 I/O error,
4 training divergence (non-finite loss), 5 gradient-check failure.

Every command is deterministic given its config. Commands with ``--out``
write the fully resolved configuration and a SHA-256 digest of their inputs
into the output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from .data import (
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    read_checkpoint,
    write_checkpoint,
    write_history_csv,
    write_matrix,
    write_report,
    write_report_csv,
)
from .errors import DomainError, TrainingDiverged, ValidationError
from .gradcheck import run_model_checks, run_op_checks
from .graphs import build_dual_complete
from .metrics import aggregate_metrics, evaluate_sample
from .models import MODEL_KINDS, build_model
from .training import TrainConfig, cross_validate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_GRADCHECK = 5

# informational reference points for full-scale (160 -> 268) model sizes
REFERENCE_PARAM_COUNTS_M = {
    "stp_gsr": 0.174,
    "direct_sr": 1.103,
    "autoencoder": 2.205,
}
REFERENCE_SCALE = (160, 268)

TRAIN_KEYS = frozenset(
    {"learning_rate", "epochs", "accumulation_batch", "seed", "model_kind", "fold_count"}
)
DATA_KEYS = frozenset({"samples", "n_s", "n_t", "noise", "modules", "seed"})


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_config_file(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise _CliError(EXIT_IO, f"cannot read config {path}: {exc}") from None
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise _CliError(EXIT_CONFIG, f"{path}: invalid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise _CliError(EXIT_CONFIG, f"{path}: config must be a JSON object")
    unknown = set(cfg) - TRAIN_KEYS - DATA_KEYS
    if unknown:
        raise _CliError(EXIT_CONFIG, f"{path}: unknown config keys {sorted(unknown)}")
    return cfg


def _pick(cfg: dict, keys) -> dict:
    return {k: v for k, v in cfg.items() if k in keys}


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_run_stamp(out_dir: Path, resolved: dict, input_paths):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(json.dumps(resolved, indent=2) + "\n")
    lines = []
    combined = hashlib.sha256()
    for p in input_paths:
        digest = _sha256_file(p)
        combined.update(digest.encode())
        lines.append(f"{digest}  {Path(p).name}")
    lines.append(f"{combined.hexdigest()}  <combined>")
    (out_dir / "inputs.sha256").write_text("\n".join(lines) + "\n")


def _dataset_input_paths(manifest_path: Path):
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    paths = [manifest_path]
    for rec in manifest.get("samples", []):
        paths.append(base / rec["lr"])
        paths.append(base / rec["hr"])
    return paths


def cmd_gen_data(args) -> int:
    cfg_dict = _load_config_file(args.config) if args.config else {}
    data_cfg = _pick(cfg_dict, DATA_KEYS)
    if args.seed is not None:
        data_cfg["seed"] = args.seed
    try:
        cfg = SyntheticConfig(**data_cfg)
    except (ValidationError, TypeError) as exc:
        raise _CliError(EXIT_CONFIG, f"invalid dataset config: {exc}") from None
    out_dir = Path(args.out)
    try:
        manifest = generate_synthetic(cfg, out_dir)
        inputs = [Path(args.config)] if args.config else []
        _write_run_stamp(out_dir, cfg.__dict__, inputs)
    except OSError as exc:
        raise _CliError(EXIT_IO, f"cannot write dataset: {exc}") from None
    print(f"wrote {len(manifest['samples'])} samples "
          f"({cfg.n_s} -> {cfg.n_t} nodes) with seed {cfg.seed} to {out_dir}")
    return EXIT_OK


def _load_dataset_checked(manifest_path: str):
    path = Path(manifest_path)
    if not path.exists():
        raise _CliError(EXIT_IO, f"manifest not found: {path}")
    try:
        return load_dataset(path)
    except ValidationError as exc:
        raise _CliError(EXIT_CONFIG, f"invalid dataset: {exc}") from None
    except OSError as exc:
        raise _CliError(EXIT_IO, f"cannot read dataset: {exc}") from None


def _print_reference_counts(seed: int):
    n_s, n_t = REFERENCE_SCALE
    print(f"parameter counts at reference scale {n_s} -> {n_t} "
          "(reported value in parentheses):")
    for kind, reported in REFERENCE_PARAM_COUNTS_M.items():
        count = build_model(kind, n_s, n_t, seed=seed).parameter_count()
        print(f"  {kind:12s} {count / 1e6:.3f} M  (reported {reported:.3f} M)")


def cmd_train(args) -> int:
    cfg_dict = _load_config_file(args.config) if args.config else {}
    train_cfg = _pick(cfg_dict, TRAIN_KEYS)
    if args.model is not None:
        train_cfg["model_kind"] = args.model
    if args.seed is not None:
        train_cfg["seed"] = args.seed
    if args.epochs is not None:
        train_cfg["epochs"] = args.epochs
    try:
        config = TrainConfig(**train_cfg)
    except (ValidationError, TypeError) as exc:
        raise _CliError(EXIT_CONFIG, f"invalid training config: {exc}") from None
    if config.model_kind not in MODEL_KINDS:
        raise _CliError(
            EXIT_CONFIG,
            f"unknown model {config.model_kind!r}; expected one of {sorted(MODEL_KINDS)}",
        )
    manifest, dataset = _load_dataset_checked(args.data)

    out_dir = Path(args.out)
    try:
        inputs = _dataset_input_paths(Path(args.data))
        if args.config:
            inputs.insert(0, Path(args.config))
        _write_run_stamp(out_dir, config.__dict__, inputs)
    except OSError as exc:
        raise _CliError(EXIT_IO, f"cannot write to {out_dir}: {exc}") from None

    try:
        report = cross_validate(dataset, config, progress=print)
    except TrainingDiverged as exc:
        raise _CliError(EXIT_DIVERGED, f"training diverged: {exc}") from None
    except ValidationError as exc:
        raise _CliError(EXIT_CONFIG, str(exc)) from None

    try:
        for fold in report["folds"]:
            write_checkpoint(fold["model"], out_dir / f"fold{fold['fold']}.checkpoint.json")
            write_history_csv(fold["history"], out_dir / f"fold{fold['fold']}.history.csv")
        write_report(report, out_dir / "report.json")
        write_report_csv(report, out_dir / "report.csv")
    except OSError as exc:
        raise _CliError(EXIT_IO, f"cannot write outputs: {exc}") from None

    print(f"aggregate metrics ({config.model_kind}, {config.fold_count} folds):")
    for name, value in report["aggregate"].items():
        print(f"  {name:16s} {'n/a' if value is None else f'{value:.6f}'}")
    sample = report["folds"][0]["model"]
    print(f"trained parameter count: {sample.parameter_count()}")
    _print_reference_counts(config.seed)
    return EXIT_OK


def _eval_pair(job) -> dict:
    pred, true, seed = job
    return evaluate_sample(pred, true, seed=seed)


def cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise _CliError(EXIT_IO, f"checkpoint not found: {ckpt_path}")
    try:
        model = read_checkpoint(ckpt_path)
    except ValidationError as exc:
        raise _CliError(EXIT_CONFIG, f"invalid checkpoint: {exc}") from None
    manifest, dataset = _load_dataset_checked(args.data)
    if (model.n_s, model.n_t) != (manifest["n_s"], manifest["n_t"]):
        raise _CliError(
            EXIT_CONFIG,
            f"checkpoint is for {model.n_s} -> {model.n_t} nodes but dataset "
            f"has {manifest['n_s']} -> {manifest['n_t']}",
        )

    out_dir = Path(args.out)
    try:
        _write_run_stamp(
            out_dir,
            {"checkpoint": str(ckpt_path), "data": str(args.data), "jobs": args.jobs},
            [ckpt_path, *_dataset_input_paths(Path(args.data))],
        )
        indices = list(range(len(dataset)))
        predictions = []
        for idx in indices:
            out = model.forward(dataset[idx][0], training=False)
            predictions.append(out.matrix)
            write_matrix(out.matrix, out_dir / f"pred_{manifest['samples'][idx]['id']}.csv")
        jobs = [(pred, dataset[idx][1], model.seed) for idx, pred in zip(indices, predictions)]
        if args.jobs > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                per_sample = list(pool.map(_eval_pair, jobs))
        else:
            per_sample = [_eval_pair(job) for job in jobs]
        for idx, entry in zip(indices, per_sample):
            entry["sample"] = idx
        report = {
            "model_kind": model.kind,
            "checkpoint": str(ckpt_path),
            "folds": [
                {
                    "fold": 0,
                    "test_samples": indices,
                    "per_sample": per_sample,
                    "aggregate": aggregate_metrics(per_sample),
                }
            ],
            "aggregate": aggregate_metrics(per_sample),
        }
        write_report(report, out_dir / "report.json")
        write_report_csv(report, out_dir / "report.csv")
    except OSError as exc:
        raise _CliError(EXIT_IO, f"cannot write outputs: {exc}") from None
    print(f"evaluated {len(dataset)} samples; report in {out_dir}")
    for name, value in report["aggregate"].items():
        print(f"  {name:16s} {'n/a' if value is None else f'{value:.6f}'}")
    return EXIT_OK


def cmd_dual_info(args) -> int:
    try:
        topo = build_dual_complete(args.n)
    except DomainError as exc:
        raise _CliError(EXIT_CONFIG, str(exc)) from None
    n = args.n
    m = topo.m
    edges = topo.num_dual_edges
    degree = 2 * (n - 2) if n > 2 else 0
    density = degree / (m - 1) if m > 1 else 0.0
    # int32 endpoint pair per dual edge
    memory_mb = edges * 2 * 4 / 1e6
    print(f"complete graph on n={n} nodes")
    print(f"  dual nodes (m)        {m}")
    print(f"  dual regular degree   {degree}")
    print(f"  dual edges            {edges}")
    print(f"  dual density          {density * 100:.3f}%  (sparsity {100 - density * 100:.3f}%)")
    print(f"  edge-list memory      {memory_mb:.1f} MB")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_op_checks()
    if args.full:
        results += run_model_checks()
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:28s} max rel err {r.error:.3e}  (threshold {r.threshold:g})")
    if failed:
        worst = max(failed, key=lambda r: r.error / r.threshold)
        print(f"FAILED: {len(failed)} checks; worst is {worst.name} "
              f"at {worst.error:.3e} (threshold {worst.threshold:g})")
        return EXIT_GRADCHECK
    print(f"all {len(results)} gradient checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stpgsr",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="cross-validated training + metric report")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--data", required=True, help="dataset manifest.json")
    p.add_argument("--model", choices=sorted(MODEL_KINDS), help="model kind")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--epochs", type=int, help="override the config epoch count")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset manifest.json")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="evaluation parallelism")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dual-info", help="dual-graph size and density figures")
    p.add_argument("--n", type=int, required=True, help="primal node count")
    p.set_defaults(func=cmd_dual_info)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--full", action="store_true", help="include whole-model checks")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
