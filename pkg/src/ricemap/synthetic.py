"""Seeded synthetic valley scenes for tests, demos and desk-scale experiments.

The scene is a forested landscape crossed by a meandering valley.  Rice
grows in contiguous rectangular fields on the valley floor, mixed with other
cropland, villages (built-up) and a river.  Bare or shadowed patches
(``other``) dot the hillsides.  Each class has a distinct mean spectrum per
season with Gaussian noise; forest and built-up carry spatial texture (blobs
of canopy shadow in forest, garden trees in villages).  Rice sits close to
cropland in spectral space, so single pixels are often ambiguous while whole
fields are not.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from ricemap.raster.core import Band, GeoGrid, Raster
from ricemap.raster.vector import PolygonSet, Ring

RICE, CROPLAND, FOREST, BUILTUP, OTHER = range(5)

# Season-mean reflectance per class: (R, G, B, N).
PRE_MEANS = np.array([
    [0.14, 0.12, 0.08, 0.23],  # rice: flooded paddies, close to cropland
    [0.16, 0.13, 0.09, 0.26],  # cropland
    [0.04, 0.07, 0.03, 0.31],  # forest
    [0.24, 0.21, 0.19, 0.27],  # built-up
    [0.07, 0.08, 0.10, 0.05],  # other: water, shadow
])
GROW_MEANS = np.array([
    [0.08, 0.12, 0.05, 0.38],
    [0.10, 0.12, 0.06, 0.32],
    [0.03, 0.06, 0.03, 0.35],
    [0.24, 0.21, 0.19, 0.28],
    [0.07, 0.08, 0.10, 0.05],
])
# Backscatter means in dB: (VV, VH).
SAR_PRE = np.array([[-15.0, -22.0], [-11.0, -18.0], [-7.5, -13.0], [-4.0, -11.0], [-20.0, -27.0]])
SAR_GROW = np.array([[-10.0, -17.0], [-10.5, -17.0], [-7.0, -12.5], [-4.0, -11.0], [-20.0, -27.0]])

# Texture: (fraction of the class's pixels, weight on the class's own mean,
# other class or None, weight on the other mean).  Forest gets dark canopy
# gaps, villages get garden trees.
TEXTURE = {FOREST: (0.25, 0.5, None, 0.0), BUILTUP: (0.35, 0.5, FOREST, 0.5)}

REFERENCE_CODES = {CROPLAND: 10, FOREST: 20, BUILTUP: 30, OTHER: 40}


@dataclass
class SyntheticScene:
    grid: GeoGrid
    labels: Raster  # 5-class ids
    texture: np.ndarray  # bool (H, W)
    pre: Raster  # R, G, B, N reflectance
    grow: Raster
    elevation: Raster
    sar_pre: Raster
    sar_grow: Raster
    rice_polygons: PolygonSet
    sampling_region: PolygonSet
    seed: int = 0
    noise: float = 0.05
    extras: dict = field(default_factory=dict)

    @property
    def label_array(self) -> np.ndarray:
        return self.labels.values[0].astype(np.int64)


def _blobs(rng: np.random.Generator, shape: tuple[int, int], fraction: float, cell: int = 3) -> np.ndarray:
    h, w = shape
    coarse = rng.random((h // cell + 1, w // cell + 1)) < fraction
    return coarse.repeat(cell, 0).repeat(cell, 1)[:h, :w]


def make_scene(height: int = 512, width: int = 1024, seed: int = 0, noise: float = 0.05,
               pixel_size: float = 10.0, origin: tuple[float, float] = (300000.0, 3040000.0),
               crs: str = "EPSG:32645") -> SyntheticScene:
    rng = np.random.default_rng(seed)
    grid = GeoGrid(origin[0], origin[1], pixel_size, pixel_size, width, height, crs)
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]

    phase = rng.uniform(0, 2 * np.pi)
    center = height / 2 + 0.06 * height * np.sin(2 * np.pi * cols / width * 1.5 + phase)
    half = 0.16 * height
    dist = np.abs(rows - center)
    valley = dist < half

    labels = np.full((height, width), FOREST, dtype=np.int64)
    labels[valley] = CROPLAND

    rice_rings = []
    cell = max(16, height // 12)
    for r0 in range(0, height, cell):
        for c0 in range(0, width, cell):
            u = rng.random()
            inset = int(rng.integers(2, 5))
            rr0, rr1 = r0 + inset, min(r0 + cell - inset, height)
            cc0, cc1 = c0 + inset, min(c0 + cell - inset, width)
            if rr1 <= rr0 or cc1 <= cc0:
                continue
            block = valley[rr0:rr1, cc0:cc1]
            if u < 0.5 and block.all():
                labels[rr0:rr1, cc0:cc1] = RICE
                x0 = grid.origin_x + cc0 * pixel_size
                x1 = grid.origin_x + cc1 * pixel_size
                y1 = grid.origin_y - rr0 * pixel_size
                y0 = grid.origin_y - rr1 * pixel_size
                rice_rings.append(Ring.rectangle(x0, y0, x1, y1, 1))

    # Villages on the valley margins.
    n_villages = max(4, width // 80)
    for _ in range(n_villages):
        c = int(rng.integers(0, width))
        side = 1 if rng.random() < 0.5 else -1
        r = int(center[0, min(c, width - 1)] + side * half * rng.uniform(0.6, 1.1))
        hh, ww = int(rng.integers(14, 30)), int(rng.integers(20, 45))
        r0, c0 = max(r - hh // 2, 0), max(c - ww // 2, 0)
        labels[r0:r0 + hh, c0:c0 + ww] = BUILTUP

    # River along the valley axis.
    river = np.abs(rows - (center + 0.02 * height * np.sin(2 * np.pi * cols / width * 5))) < 3
    labels[river] = OTHER

    # Bare / shadowed patches on the hillsides.
    n_patches = max(4, width // 100)
    for _ in range(n_patches):
        cy, cx = rng.integers(0, height), rng.integers(0, width)
        ry, rx = rng.uniform(6, 18), rng.uniform(10, 25)
        ell = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 < 1
        labels[ell & ~valley] = OTHER

    texture = np.zeros_like(valley)
    blobs = {}
    for cls, (frac, *_) in TEXTURE.items():
        blobs[cls] = _blobs(rng, labels.shape, frac) & (labels == cls)
        texture |= blobs[cls]

    def optical(means):
        per_pixel = means[labels]
        for cls, (_, w_own, other, w_other) in TEXTURE.items():
            mix = w_own * means[cls] + (w_other * means[other] if other is not None else 0.0)
            per_pixel[blobs[cls]] = mix
        vals = per_pixel.transpose(2, 0, 1)
        vals = vals + rng.normal(0.0, noise, size=vals.shape)
        return np.clip(vals, 0.0, 1.0).astype(np.float32)

    names = ("R", "G", "B", "N")
    pre = Raster(grid, tuple(Band(n, None) for n in names), optical(PRE_MEANS))
    grow = Raster(grid, tuple(Band(n, None) for n in names), optical(GROW_MEANS))

    elev = 2200.0 + 6.0 * np.maximum(dist - half * 0.5, 0) + rng.normal(0, 3.0, size=(height, width))
    elevation = Raster(grid, (Band("E", None),), elev.astype(np.float32)[None])

    def sar(means):
        vals = means[labels].transpose(2, 0, 1) + rng.normal(0, 1.5, size=(2, height, width))
        return vals.astype(np.float32)

    sar_pre = Raster(grid, (Band("VV", None), Band("VH", None)), sar(SAR_PRE))
    sar_grow = Raster(grid, (Band("VV", None), Band("VH", None)), sar(SAR_GROW))

    # Sampling region: the western two thirds of the valley corridor, kept
    # clear of the image border.  The rest of the scene holds rice that
    # independent validation plots can reach.
    y_top = grid.origin_y - (height / 2 - 0.3 * height) * pixel_size
    y_bot = grid.origin_y - (height / 2 + 0.3 * height) * pixel_size
    region = PolygonSet([Ring.rectangle(grid.origin_x + 0.05 * width * pixel_size, y_bot,
                                        grid.origin_x + 0.65 * width * pixel_size, y_top, 1)])
    label_raster = Raster(grid, (Band("label", None),), labels.astype(np.float32)[None])
    return SyntheticScene(grid, label_raster, texture, pre, grow, elevation, sar_pre, sar_grow,
                          PolygonSet(rice_rings), region, seed, noise)


def four_class_reference(scene: SyntheticScene, block: int = 3) -> Raster:
    """Coarse reference land cover: rice folded into cropland, block-majority smoothed,
    encoded with ``REFERENCE_CODES``."""
    lab = scene.label_array.copy()
    lab[lab == RICE] = CROPLAND
    h, w = lab.shape
    out = np.empty_like(lab)
    for r in range(0, h, block):
        for c in range(0, w, block):
            blk = lab[r:r + block, c:c + block]
            out[r:r + block, c:c + block] = np.bincount(blk.ravel(), minlength=5).argmax()
    codes = np.vectorize(REFERENCE_CODES.get)(out).astype(np.float32)
    return Raster(scene.grid, (Band("landcover", None),), codes[None])


def monthly_mosaics(scene: SyntheticScene, months=(3, 4, 5, 6, 7, 8, 9), pre_months=(3, 4, 5),
                    month_noise: float = 0.01, dn_scale: float = 1e4, cloud_month: int | None = 7,
                    seed: int | None = None) -> dict[int, Raster]:
    """Monthly RGBN mosaics in provider digital numbers (reflectance x ``dn_scale``).

    Nodata is 0; ``cloud_month`` gets a masked-out rectangle.
    """
    rng = np.random.default_rng(scene.seed + 1000 if seed is None else seed)
    out = {}
    h, w = scene.grid.shape
    for m in months:
        base = scene.pre.values if m in pre_months else scene.grow.values
        vals = np.clip(base + rng.normal(0, month_noise, size=base.shape), 1e-4, 1.0) * dn_scale
        vals = np.round(vals).astype(np.float32)
        if m == cloud_month:
            vals[:, h // 8: h // 4, w // 8: w // 4] = 0.0
        out[m] = Raster(scene.grid, tuple(Band(n, 0.0) for n in ("R", "G", "B", "N")), vals)
    return out


def ceo_plots(scene: SyntheticScene, n: int, seed: int = 0, plot_pixels: int = 3) -> list[dict]:
    """Random interpretation plots labelled rice / non-rice / mixed from the truth.

    A plot covers ``plot_pixels`` x ``plot_pixels`` pixels; it is mixed when
    the window holds both rice and non-rice.
    """
    rng = np.random.default_rng(seed)
    h, w = scene.grid.shape
    lab = scene.label_array
    half = plot_pixels // 2
    rows = rng.integers(half, h - half, size=n)
    cols = rng.integers(half, w - half, size=n)
    plots = []
    for i, (r, c) in enumerate(zip(rows, cols)):
        win = lab[r - half:r + half + 1, c - half:c + half + 1] == RICE
        label = "rice" if win.all() else "non-rice" if not win.any() else "mixed"
        x, y = scene.grid.pixel_center(c, r)
        plots.append({"plot_id": f"p{i:05d}", "x": float(x), "y": float(y), "label": label})
    return plots


def write_ceo_csv(plots: list[dict], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plot_id", "x", "y", "label"])
        for p in plots:
            w.writerow([p["plot_id"], repr(p["x"]), repr(p["y"]), p["label"]])
