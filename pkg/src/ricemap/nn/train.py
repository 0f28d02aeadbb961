"""Mini-batch training with Adam, augmentation and per-epoch metrics."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ricemap.errors import DataError
from ricemap.nn import augment as aug
from ricemap.nn.layers import softmax_cross_entropy
from ricemap.nn.metrics import MetricAccumulator, MetricSet
from ricemap.nn.models import Model, ModelSpec
from ricemap.nn.optim import Adam
from ricemap.stratify import SampleRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    augment_prob: float = 0.8
    seed: int = 0
    # Samples per forward/backward pass inside a batch; bounds memory only.
    micro_batch: int = 4
    debug: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1 or self.micro_batch < 1:
            raise ValueError("batch sizes must be >= 1")
        if not 0.0 <= self.augment_prob <= 1.0:
            raise ValueError("augment_prob must be in [0, 1]")


@dataclass
class ModelWeights:
    """Everything needed to resume: parameters, Adam moments and counters."""

    spec: ModelSpec
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    @classmethod
    def capture(cls, model: Model, opt: Adam, epoch: int) -> "ModelWeights":
        params = model.parameters()
        opt.init_state(params)
        return cls(
            spec=model.spec,
            params={k: v.copy() for k, v in params.items()},
            adam_m={k: opt.m[k].copy() for k in params},
            adam_v={k: opt.v[k].copy() for k in params},
            step=opt.step_count,
            epoch=epoch,
            learning_rate=opt.learning_rate,
            beta1=opt.beta1,
            beta2=opt.beta2,
            epsilon=opt.epsilon,
        )

    def optimizer(self) -> Adam:
        opt = Adam(self.learning_rate, self.beta1, self.beta2, self.epsilon)
        opt.step_count = self.step
        opt.m = {k: v.copy() for k, v in self.adam_m.items()}
        opt.v = {k: v.copy() for k, v in self.adam_v.items()}
        return opt


def records_to_arrays(records: Sequence[SampleRecord]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([r.features for r in records]).astype(np.float32, copy=False)
    y = np.stack([r.labels for r in records]).astype(np.float32, copy=False)
    return x, y


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")


def evaluate(model: Model, x: np.ndarray, y: np.ndarray, micro_batch: int = 4) -> MetricSet:
    acc = MetricAccumulator()
    for s in range(0, len(x), micro_batch):
        xb, yb = x[s:s + micro_batch], y[s:s + micro_batch]
        logits = model.logits(xb, training=False)
        loss, probs, _ = softmax_cross_entropy(logits, yb)
        acc.update(probs, yb, loss_sum=loss * yb.shape[0] * int(np.prod(yb.shape[2:])))
    return acc.result()


def evaluate_records(model: Model, records: Sequence[SampleRecord], micro_batch: int = 4) -> MetricSet:
    x, y = records_to_arrays(records)
    return evaluate(model, x, y, micro_batch)


def train(model: Model, train_records: Sequence[SampleRecord], val_records: Sequence[SampleRecord],
          config: TrainConfig, resume: Optional[ModelWeights] = None,
          on_epoch: Optional[Callable[[int, MetricSet, Optional[MetricSet]], None]] = None,
          ) -> tuple[ModelWeights, list[tuple[MetricSet, Optional[MetricSet]]]]:
    """Train ``model`` in place for ``config.epochs`` epochs (counted from zero).

    Epoch ``e`` draws its shuffle order, augmentations and dropout masks from
    ``default_rng([seed, e])``, so resuming from a checkpoint taken after
    epoch ``e`` reproduces an uninterrupted run bit for bit.
    """
    if not train_records:
        raise DataError("empty training set")
    x, y = records_to_arrays(train_records)
    if x.shape[1] != model.spec.input_channels:
        raise DataError(f"records have {x.shape[1]} channels, model expects {model.spec.input_channels}")
    xv = yv = None
    if val_records:
        xv, yv = records_to_arrays(val_records)
        if xv.shape[1] != model.spec.input_channels:
            raise DataError("validation records have the wrong channel count")

    if resume is not None:
        model.load_parameters(resume.params)
        opt = resume.optimizer()
        start = resume.epoch
    else:
        opt = Adam(config.learning_rate, config.beta1, config.beta2, config.epsilon)
        start = 0
    opt.init_state(model.parameters())

    n, size = len(x), x.shape[-1]
    history: list[tuple[MetricSet, Optional[MetricSet]]] = []
    for epoch in range(start, config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        model.set_rng(rng)
        order = rng.permutation(n)
        acc = MetricAccumulator()
        for b in range(0, n, config.batch_size):
            idx = order[b:b + config.batch_size]
            xb, yb = x[idx], y[idx]
            if size > 1 and config.augment_prob > 0:
                for i in range(len(idx)):
                    xb[i], yb[i] = aug.apply(xb[i], yb[i], aug.draw(rng, config.augment_prob))
            batch_pixels = len(idx) * size * size
            model.zero_grad()
            for s in range(0, len(idx), config.micro_batch):
                xm, ym = xb[s:s + config.micro_batch], yb[s:s + config.micro_batch]
                logits = model.logits(xm, training=True)
                loss, probs, dlogits = softmax_cross_entropy(logits, ym)
                if not np.isfinite(loss):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}")
                micro_pixels = len(xm) * size * size
                dlogits *= np.float32(micro_pixels / batch_pixels)
                model.backward(dlogits)
                acc.update(probs, ym, loss_sum=loss * micro_pixels)
            if config.debug:
                for name, g in model.gradients().items():
                    _check_finite(name, g)
            opt.step(model.parameters(), model.gradients())
        train_metrics = acc.result()
        val_metrics = evaluate(model, xv, yv, config.micro_batch) if xv is not None else None
        history.append((train_metrics, val_metrics))
        logger.info("epoch %d train=%s val=%s", epoch + 1, train_metrics, val_metrics)
        if on_epoch is not None:
            on_epoch(epoch, train_metrics, val_metrics)
    model.set_rng(None)
    return ModelWeights.capture(model, opt, config.epochs), history


HISTORY_COLUMNS = ("epoch", "split", "loss", "categorical_accuracy", "precision", "recall", "f1")


def write_history_csv(history: Sequence[tuple[MetricSet, Optional[MetricSet]]], path: str | os.PathLike,
                      first_epoch: int = 1) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for i, (tr, va) in enumerate(history):
            for split, m in (("train", tr), ("val", va)):
                if m is None:
                    continue
                w.writerow([first_epoch + i, split, f"{m.loss:.6f}", f"{m.accuracy:.6f}",
                            f"{m.precision:.6f}", f"{m.recall:.6f}", f"{m.f1:.6f}"])
