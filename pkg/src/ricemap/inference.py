"""Map inference: tiled U-Net prediction, row-chunked DNN prediction."""

from __future__ import annotations

import copy
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ricemap.errors import DataError
from ricemap.nn.models import Model
from ricemap.raster.core import Band, Raster
from ricemap.stratify import CLASSES

TILE = 256
MARGIN = 32
STRIDE = TILE - 2 * MARGIN  # 192
DNN_ROWS = 64

PROB_BANDS = tuple(f"p_{c.replace('-', '')}" for c in CLASSES)


def tile_origins(length: int, tile: int = TILE, stride: int = STRIDE) -> list[int]:
    """Tile start offsets along one axis: multiples of ``stride`` until a tile reaches the end."""
    origins = [0]
    while origins[-1] + tile < length:
        origins.append(origins[-1] + stride)
    return origins


def _write_span(origin: int, length: int, tile: int = TILE, margin: int = MARGIN) -> tuple[int, int]:
    """Image-coordinate span a tile writes: its inner part, plus the margin at image borders."""
    lo = origin if origin == 0 else origin + margin
    hi = min(origin + tile - margin, length)
    if origin + tile >= length:
        hi = length
    return lo, hi


def _tile_input(x: np.ndarray, r0: int, c0: int, tile: int) -> np.ndarray:
    c, h, w = x.shape
    out = np.zeros((c, tile, tile), dtype=np.float32)
    rh, cw = min(tile, h - r0), min(tile, w - c0)
    out[:, :rh, :cw] = x[:, r0:r0 + rh, c0:c0 + cw]
    return out


def _unet_tiles(model: Model, x: np.ndarray, threads: int) -> np.ndarray:
    _, h, w = x.shape
    jobs = [(r0, c0) for r0 in tile_origins(h) for c0 in tile_origins(w)]
    out = np.empty((len(CLASSES), h, w), dtype=np.float32)

    def run(m: Model, r0: int, c0: int) -> None:
        probs = m.predict(_tile_input(x, r0, c0, TILE)[None])[0]
        (rl, rh), (cl, ch) = _write_span(r0, h), _write_span(c0, w)
        out[:, rl:rh, cl:ch] = probs[:, rl - r0:rh - r0, cl - c0:ch - c0]

    _run_jobs(model, jobs, run, threads)
    return out


def _dnn_rows(model: Model, x: np.ndarray, threads: int, rows: int = DNN_ROWS) -> np.ndarray:
    _, h, w = x.shape
    out = np.empty((len(CLASSES), h, w), dtype=np.float32)

    def run(m: Model, r0: int, _c0: int) -> None:
        out[:, r0:r0 + rows] = m.predict(x[None, :, r0:r0 + rows])[0]

    _run_jobs(model, [(r0, 0) for r0 in range(0, h, rows)], run, threads)
    return out


def _run_jobs(model: Model, jobs, run, threads: int) -> None:
    # Layers cache activations, so each worker gets its own copy of the model.
    if threads <= 1 or len(jobs) == 1:
        for r0, c0 in jobs:
            run(model, r0, c0)
        return
    n = min(threads, len(jobs))
    models = [model] + [copy.deepcopy(model) for _ in range(n - 1)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(lambda i: [run(models[i], *jobs[j]) for j in range(i, len(jobs), n)], i)
                   for i in range(n)]
        for f in futures:
            f.result()


def predict_map(model: Model, features: Raster, threads: int = 1) -> Raster:
    """Per-pixel class probabilities on the feature raster's grid.

    The U-Net runs on 256 x 256 tiles at a 192-pixel stride; each tile keeps
    its inner 192 x 192 block and drops a 32-pixel margin, except along the
    image border where the margin is kept.  Areas beyond the image are zero
    padded.  The DNN is pixel-wise and is evaluated in row chunks.  Pixels
    with any invalid feature are NaN in every output band.  Results do not
    depend on ``threads``.
    """
    if features.band_count != model.spec.input_channels:
        raise DataError(f"model expects {model.spec.input_channels} channels, "
                        f"feature raster has {features.band_count}")
    x = features.as_nan()
    valid = ~np.isnan(x).any(axis=0)
    x = np.where(np.isnan(x), 0.0, x).astype(np.float32)
    if model.spec.architecture == "unet":
        probs = _unet_tiles(model, x, threads)
    else:
        probs = _dnn_rows(model, x, threads)
    probs[:, ~valid] = np.nan
    return Raster(features.grid, tuple(Band(n, float("nan")) for n in PROB_BANDS), probs)
