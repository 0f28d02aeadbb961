"""Patch augmentation: flips, right-angle rotations, brightness and contrast."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ricemap.stratify import SampleRecord

BRIGHTNESS = 0.1
CONTRAST = (0.9, 1.1)


@dataclass(frozen=True)
class AugmentDraw:
    applied: bool
    hflip: bool
    vflip: bool
    quarter_turns: int  # 1, 2 or 3
    brightness: float
    contrast: float


def draw(rng: np.random.Generator, probability: float = 0.8) -> AugmentDraw:
    """Sample one augmentation; always consumes the same number of variates."""
    u = rng.random(3)
    turns = int(rng.integers(1, 4))
    brightness = float(rng.uniform(-BRIGHTNESS, BRIGHTNESS))
    contrast = float(rng.uniform(*CONTRAST))
    return AugmentDraw(bool(u[0] < probability), bool(u[1] < 0.5), bool(u[2] < 0.5), turns, brightness, contrast)


def _spatial(a: np.ndarray, d: AugmentDraw) -> np.ndarray:
    if d.hflip:
        a = a[..., :, ::-1]
    if d.vflip:
        a = a[..., ::-1, :]
    return np.rot90(a, k=d.quarter_turns, axes=(-2, -1))


def apply(features: np.ndarray, labels: np.ndarray, d: AugmentDraw) -> tuple[np.ndarray, np.ndarray]:
    """Apply ``d`` to (C, S, S) features and (5, S, S) labels."""
    if not d.applied or features.shape[-1] == 1:
        return features, labels
    f = _spatial(features, d)
    lab = np.ascontiguousarray(_spatial(labels, d))
    f = f + np.float32(d.brightness)
    mean = f.mean(axis=(-2, -1), keepdims=True)
    f = (f - mean) * np.float32(d.contrast) + mean
    return np.clip(f, 0.0, 1.0).astype(np.float32), lab


def augment(record: SampleRecord, seed: int | np.random.Generator, probability: float = 0.8) -> SampleRecord:
    """Randomly augmented copy of ``record`` (unchanged for 1x1 patches)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d = draw(rng, probability)
    f, lab = apply(record.features, record.labels, d)
    return replace(record, features=f, labels=lab)
