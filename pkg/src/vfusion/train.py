"""RMSprop with coupled weight decay, the epoch loop, periodic hold-out validation
with best-checkpoint retention, and confusion-matrix evaluation.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .checkpoint import save_checkpoint
from .model import CLASSES, ModelParams, forward_batch, predict_label
from .tensor import Tensor, no_grad
from .video import PreparedClip, to_model_input

log = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    lr: float = 1e-4
    alpha: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.05
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ModelParams, **hyper) -> "OptimizerState":
        state = cls(**hyper)
        state.v = {name: np.zeros_like(t.data) for name, t in params.items()}
        return state


def rmsprop_step(params: ModelParams, state: OptimizerState) -> None:
    """In place: g = grad + wd*theta; v = a*v + (1-a)*g^2; theta -= lr * g / (sqrt(v) + eps)."""
    missing = [name for name, t in params.items() if t.grad is None]
    if missing:
        raise ValueError(f"rmsprop_step: no gradient for parameter {missing[0]!r}"
                         + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
    for name, t in params.items():
        theta = t.data
        g = t.grad + state.weight_decay * theta if state.weight_decay else t.grad
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(theta)
        v *= state.alpha
        v += (1 - state.alpha) * g * g
        theta -= (state.lr * g / (np.sqrt(v) + state.eps)).astype(theta.dtype)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray = field(default_factory=lambda: np.zeros((2, 2), dtype=np.int64))  # [actual][predicted]

    @classmethod
    def from_predictions(cls, actual, predicted) -> "ConfusionMatrix":
        m = np.zeros((2, 2), dtype=np.int64)
        np.add.at(m, (np.asarray(actual, dtype=int), np.asarray(predicted, dtype=int)), 1)
        return cls(m)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else 0.0

    def to_text(self) -> str:
        w = max(len(c) for c in CLASSES) + 2
        lines = ["actual \\ predicted".ljust(w + 2) + "".join(c.rjust(w) for c in CLASSES)]
        for i, c in enumerate(CLASSES):
            lines.append(c.ljust(w + 2) + "".join(str(v).rjust(w) for v in self.counts[i]))
        lines.append(f"accuracy {self.accuracy:.4f} ({int(np.trace(self.counts))}/{self.total})")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["actual,predicted_" + ",predicted_".join(CLASSES)]
        rows += [f"{c}," + ",".join(str(v) for v in self.counts[i]) for i, c in enumerate(CLASSES)]
        return "\n".join(rows) + "\n"

    def write(self, out_dir, stem: str = "confusion") -> None:
        out_dir = Path(out_dir)
        (out_dir / f"{stem}.txt").write_text(self.to_text())
        (out_dir / f"{stem}.csv").write_text(self.to_csv())


@dataclass
class TrainRun:
    epochs: int = 40
    batch_size: int = 8
    validation_period: int = 5
    seed: int = 0
    best_val_accuracy: float = -1.0
    best_epoch: int = 0
    history: list = field(default_factory=list)      # (epoch, train_loss, train_acc)
    validations: list = field(default_factory=list)  # (epoch, val_loss, val_acc)
    checkpoint_path: Path | None = None
    metrics_path: Path | None = None


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


def _batches(n: int, batch_size: int, rng):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for lo in range(0, n, batch_size):
        yield order[lo:lo + batch_size]


def train_epoch(params: ModelParams, dataset: list[PreparedClip], optimizer: OptimizerState,
                epoch: int, seed: int = 0, batch_size: int = 8) -> tuple[float, float]:
    """One pass over shuffled batches; returns ``(mean clip loss, training accuracy)``."""
    if not dataset:
        raise ValueError("train_epoch: empty training split")
    crop = params.config.crop_size
    rng = epoch_rng(seed, epoch)
    order_rng, clip_seeds = rng, rng.integers(0, 2**63, size=len(dataset))
    total_loss, correct, seen = 0.0, 0, 0
    for idx in _batches(len(dataset), batch_size, order_rng):
        xs, ys = [], []
        for i in idx:
            clip = dataset[i]
            try:
                xs.append(to_model_input(clip, crop, np.random.default_rng(clip_seeds[i]), train=True))
                ys.append(clip.label)
            except Exception as e:  # noqa: BLE001 - a bad clip must not kill the epoch
                log.warning("skipping clip %s: %s", clip.source_id, e)
        if not xs:
            continue
        params.zero_grad()
        logits = forward_batch(Tensor(np.stack(xs).astype(params_dtype(params))), params)
        probs, loss = ops.softmax_cross_entropy(logits, np.asarray(ys))
        loss.backward()
        rmsprop_step(params, optimizer)
        total_loss += float(loss.item()) * len(ys)
        correct += int(np.sum(predict_label(probs.data) == np.asarray(ys)))
        seen += len(ys)
    if not seen:
        raise ValueError("train_epoch: every clip in the training split failed preprocessing")
    return total_loss / seen, correct / seen


def params_dtype(params: ModelParams):
    return next(iter(params.values())).dtype


def predict(params: ModelParams, dataset: list[PreparedClip], batch_size: int = 8):
    """Eval-mode pass (center crop, no augmentation): ``(probs[N,2], labels[N], mean loss)``."""
    crop = params.config.crop_size
    all_probs, labels, total = [], [], 0.0
    with no_grad():
        for idx in _batches(len(dataset), batch_size, None):
            x = np.stack([to_model_input(dataset[i], crop, train=False) for i in idx])
            y = np.asarray([dataset[i].label for i in idx])
            logits = forward_batch(Tensor(x.astype(params_dtype(params))), params)
            probs, loss = ops.softmax_cross_entropy(logits, y)
            all_probs.append(probs.data)
            labels.append(y)
            total += float(loss.item()) * len(y)
    probs = np.concatenate(all_probs) if all_probs else np.zeros((0, 2))
    labels = np.concatenate(labels) if labels else np.zeros(0, dtype=int)
    return probs, labels, (total / len(labels) if len(labels) else math.nan)


def evaluate(params: ModelParams, dataset: list[PreparedClip], batch_size: int = 8):
    """``(accuracy, ConfusionMatrix)`` over ``dataset``; ties go to class 0 (violence)."""
    if not dataset:
        raise ValueError("evaluate: empty test split")
    probs, labels, _ = predict(params, dataset, batch_size)
    cm = ConfusionMatrix.from_predictions(labels, predict_label(probs))
    return cm.accuracy, cm


def write_best_record(path: Path, epoch: int, accuracy: float, config: dict) -> None:
    path.write_text(json.dumps({"epoch": epoch, "val_accuracy": accuracy, "config": config},
                               indent=2, sort_keys=True) + "\n")


def best_record_path(checkpoint: Path) -> Path:
    return checkpoint.with_suffix(".json")


def holdout_validate(params: ModelParams, dataset: list[PreparedClip], epoch: int, run: TrainRun,
                     optimizer: OptimizerState | None = None, extra_config: dict | None = None,
                     batch_size: int = 8) -> TrainRun:
    """Validate; checkpoint only on strict improvement over the best so far."""
    probs, labels, loss = predict(params, dataset, batch_size)
    cm = ConfusionMatrix.from_predictions(labels, predict_label(probs))
    acc = cm.accuracy
    run.validations.append((epoch, loss, acc))
    _log_metrics(run, epoch, "val", loss, acc)
    if acc > run.best_val_accuracy:
        run.best_val_accuracy, run.best_epoch = acc, epoch
        if run.checkpoint_path is not None:
            save_checkpoint(run.checkpoint_path, params, optimizer)
            config = dict(extra_config or {}, **params.config.to_dict())
            write_best_record(best_record_path(run.checkpoint_path), epoch, acc, config)
        log.info("epoch %d: new best validation accuracy %.4f", epoch, acc)
    return run


def _log_metrics(run: TrainRun, epoch: int, phase: str, loss: float, acc: float) -> None:
    if run.metrics_path is None:
        return
    new = not run.metrics_path.exists()
    with open(run.metrics_path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["epoch", "phase", "loss", "accuracy"])
        w.writerow([epoch, phase, repr(float(loss)), repr(float(acc))])


def is_validation_epoch(epoch: int, run: TrainRun) -> bool:
    return epoch % run.validation_period == 0 or epoch == run.epochs


def fit(params: ModelParams, train_set, val_set, optimizer: OptimizerState, run: TrainRun,
        extra_config: dict | None = None, stop_at_train_accuracy: float | None = None) -> TrainRun:
    """Full loop: train every epoch, validate every ``validation_period`` epochs and at the end."""
    for epoch in range(1, run.epochs + 1):
        loss, acc = train_epoch(params, train_set, optimizer, epoch, run.seed, run.batch_size)
        run.history.append((epoch, loss, acc))
        _log_metrics(run, epoch, "train", loss, acc)
        log.info("epoch %d: train loss %.5f acc %.4f", epoch, loss, acc)
        if val_set and is_validation_epoch(epoch, run):
            holdout_validate(params, val_set, epoch, run, optimizer, extra_config, run.batch_size)
        if stop_at_train_accuracy is not None and acc >= stop_at_train_accuracy:
            break
    return run
