"""Deterministic training loop: Adam with gradient accumulation, plus k-fold
cross-validation wiring the models to the topology-metric evaluation.

Everything is a pure function of (dataset, config): shuffles draw from
per-epoch derived seeds, dropout from a single sequential stream, and each
fold re-seeds identically so folds over identical data produce identical
reports.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, TrainingDiverged, ValidationError
from .metrics import aggregate_metrics, evaluate_sample, METRIC_NAMES
from .models import build_model

DEFAULT_LEARNING_RATE = 0.005
DEFAULT_EPOCHS = 60
DEFAULT_ACCUMULATION = 16
DEFAULT_FOLDS = 3

# stream tags for deriving independent deterministic generators from one seed
_STREAM_SHUFFLE = 1
_STREAM_DROPOUT = 2


@dataclass
class TrainConfig:
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = DEFAULT_EPOCHS
    accumulation_batch: int = DEFAULT_ACCUMULATION
    seed: int = 0
    model_kind: str = "stp_gsr"
    fold_count: int = DEFAULT_FOLDS

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.accumulation_batch < 1:
            raise ValidationError("accumulation_batch must be >= 1")
        if self.fold_count < 2:
            raise ValidationError("fold_count must be >= 2")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")


@dataclass
class TrainHistory:
    epoch_loss: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)


def derived_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


class Adam:
    """Bias-corrected adaptive-moment optimizer over Parameter objects."""

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self, lr: float):
        """Apply one update from the accumulated gradients, then zero them."""
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p.zero_grad()


def kfold_split(sample_count: int, k: int, seed: int):
    """Seeded shuffle then contiguous partition into k folds of size +-1."""
    if sample_count < k:
        raise DomainError(f"cannot split {sample_count} samples into {k} folds")
    perm = derived_rng(seed, _STREAM_SHUFFLE).permutation(sample_count)
    folds = np.array_split(perm, k)
    out = []
    for i, test in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(test)))
    return out


def _check_dataset(dataset):
    if not dataset:
        raise ValidationError("dataset is empty")
    n_s = dataset[0][0].shape[0]
    n_t = dataset[0][1].shape[0]
    for idx, (a_s, a_t) in enumerate(dataset):
        if a_s.shape != (n_s, n_s) or a_t.shape != (n_t, n_t):
            raise ValidationError(
                f"sample {idx} has sizes {a_s.shape[0]}->{a_t.shape[0]}, "
                f"expected {n_s}->{n_t}"
            )
    return n_s, n_t


def train(model, dataset, config: TrainConfig):
    """Train in place; returns (model, TrainHistory).

    Per epoch: seeded shuffle, then per accumulation group: sum per-sample
    gradients via one backward each, average over the group's actual size,
    and take one Adam step.
    """
    _check_dataset(dataset)
    optimizer = Adam(model.parameters())
    model.zero_grad()
    dropout_rng = derived_rng(config.seed, _STREAM_DROPOUT)
    history = TrainHistory()
    n = len(dataset)
    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = derived_rng(config.seed, _STREAM_SHUFFLE, epoch).permutation(n)
        losses = []
        for start in range(0, n, config.accumulation_batch):
            group = order[start : start + config.accumulation_batch]
            for idx in group:
                a_s, a_t = dataset[idx]
                out = model.forward(a_s, training=True, rng=dropout_rng)
                loss = model.loss(out, a_t, a_s)
                value = float(loss.values)
                if not np.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, sample {idx}"
                    )
                losses.append(value)
                if loss.tape is not None:
                    out.tape.backward(loss)
                # a constant loss (fully degenerate forward) has zero gradient
            for p in optimizer.params:
                p.grad /= len(group)
            optimizer.step(config.learning_rate)
        history.epoch_loss.append(float(np.mean(losses)))
        history.epoch_seconds.append(time.perf_counter() - started)
    return model, history


def evaluate_fold(model, dataset, indices, eval_seed: int):
    """Metric report entries for the given samples, prediction via the
    trained model in evaluation mode."""
    per_sample = []
    for idx in indices:
        a_s, a_t = dataset[idx]
        out = model.forward(a_s, training=False)
        entry = evaluate_sample(out.matrix, a_t, seed=eval_seed)
        entry["sample"] = int(idx)
        per_sample.append(entry)
    return per_sample


def cross_validate(dataset, config: TrainConfig, progress=None):
    """K-fold cross-validation; returns the full report dictionary.

    Each fold trains a freshly seeded model (identical seeding per fold, so
    identical folds give identical reports) and evaluates on its held-out
    samples with a shared evaluation seed.
    """
    n_s, n_t = _check_dataset(dataset)
    folds = kfold_split(len(dataset), config.fold_count, config.seed)
    fold_reports = []
    histories = []
    for fold_idx, (train_idx, test_idx) in enumerate(folds):
        if progress is not None:
            progress(f"fold {fold_idx}: training {config.model_kind} "
                     f"on {len(train_idx)} samples")
        model = build_model(config.model_kind, n_s, n_t, seed=config.seed)
        subset = [dataset[i] for i in train_idx]
        model, history = train(model, subset, config)
        per_sample = evaluate_fold(model, dataset, test_idx, eval_seed=config.seed)
        fold_reports.append(
            {
                "fold": fold_idx,
                "test_samples": [int(i) for i in test_idx],
                "per_sample": per_sample,
                "aggregate": aggregate_metrics(per_sample),
                "model": model,
                "history": history,
            }
        )
        histories.append(history)

    aggregate = {}
    for name in METRIC_NAMES:
        vals = [r["aggregate"][name] for r in fold_reports if r["aggregate"][name] is not None]
        aggregate[name] = float(np.mean(vals)) if vals else None
    return {
        "model_kind": config.model_kind,
        "fold_count": config.fold_count,
        "folds": fold_reports,
        "aggregate": aggregate,
    }
