"""Training metrics: loss, categorical accuracy, thresholded micro precision/recall, F1."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

THRESHOLD = 0.5
CE_EPS = 1e-7


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall (0 when both are 0)."""
    if precision + recall == 0:
        return 0.0
    return 2 * (recall * precision) / (recall + precision)


def _ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


@dataclass(frozen=True)
class MetricSet:
    loss: float
    accuracy: float
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict:
        return asdict(self)


class MetricAccumulator:
    """Streams batches of (probabilities, one-hot labels) into a MetricSet."""

    def __init__(self) -> None:
        self.loss_sum = 0.0
        self.pixels = 0
        self.correct = 0
        self.tp = 0
        self.fp = 0
        self.fn = 0

    def update(self, probs: np.ndarray, onehot: np.ndarray, loss_sum: float | None = None) -> None:
        """``loss_sum`` is the summed per-pixel loss; computed from ``probs`` when omitted."""
        if probs.shape != onehot.shape:
            raise ValueError(f"prediction shape {probs.shape} != label shape {onehot.shape}")
        n_pix = probs.shape[0] * int(np.prod(probs.shape[2:]))
        if loss_sum is None:
            p = np.maximum(probs, CE_EPS)
            loss_sum = float(-(onehot * np.log(p)).sum(dtype=np.float64))
        self.loss_sum += loss_sum
        self.pixels += n_pix
        self.correct += int(np.count_nonzero(np.argmax(probs, axis=1) == np.argmax(onehot, axis=1)))
        pred = probs > THRESHOLD
        truth = onehot > 0.5
        self.tp += int(np.count_nonzero(pred & truth))
        self.fp += int(np.count_nonzero(pred & ~truth))
        self.fn += int(np.count_nonzero(~pred & truth))

    def result(self) -> MetricSet:
        precision = _ratio(self.tp, self.tp + self.fp)
        recall = _ratio(self.tp, self.tp + self.fn)
        return MetricSet(
            loss=_ratio(self.loss_sum, self.pixels),
            accuracy=_ratio(self.correct, self.pixels),
            precision=precision,
            recall=recall,
            f1=f1_score(precision, recall),
        )


def metrics(predictions: np.ndarray, onehot: np.ndarray) -> MetricSet:
    """Metrics over (N, 5, H, W) or (5, H, W) probability/label arrays."""
    predictions = np.asarray(predictions)
    onehot = np.asarray(onehot)
    if predictions.shape != onehot.shape:
        raise ValueError(f"prediction shape {predictions.shape} != label shape {onehot.shape}")
    if predictions.ndim == 3:
        predictions, onehot = predictions[None], onehot[None]
    acc = MetricAccumulator()
    acc.update(predictions, onehot)
    return acc.result()
