"""Write a synthetic scene to disk as a complete pipeline input set plus config."""

from __future__ import annotations

import os
import shutil
from typing import Optional

import numpy as np

from ricemap import synthetic as syn
from ricemap.raster.geotiff import write_geotiff
from ricemap.raster.resample import resample
from ricemap.raster.vector import write_polygons

CONFIG_TEMPLATE = """\
# Synthetic demo configuration (seed {seed}).
[paths]
monthly_dir = mosaics
monthly_pattern = month_{{month:02d}}.tif
elevation = elevation.tif
sar_pre = sar_pre.tif
sar_grow = sar_grow.tif
reference = landcover.tif
rice_polygons = rice_polygons.txt
sampling_region = sampling_region.txt
ceo_csv = ceo.csv
metric_table = reference_metrics.csv
output = output

[grid]
crs = {crs}

[features]
variants = {variants}
include_indices = false

[cluster]
k = 12
seed = {seed}
fit_pixels = 50000

[sampling]
rice = {n}
cropland = {n}
forest = {n}
built-up = {n}
other = {n}
seed = {seed}

[split]
train = 0.7
val = 0.2
test = 0.1
seed = {seed}

[model]
architectures = dnn,unet
base_filters = 8
patch_size = {patch}

[train]
epochs = {epochs}
batch_size = 32
seed = {seed}

[evaluation]
survey_acres = {survey}

[runtime]
threads = 1
"""


def write_demo(outdir: str, seed: int = 0, height: int = 512, width: int = 1024, per_class: int = 10,
               epochs: int = 2, patch_size: int = 256, variants: str = "RGBN,RGBNE,RGBNS,RGBNES",
               n_plots: int = 400, survey_acres: Optional[float] = None) -> str:
    """Generate the scene and its input files under ``outdir``; returns the config path.

    The elevation raster is written on a coarser 20 m grid so the feature
    stage exercises resampling.
    """
    from ricemap.pipeline import builtin_metric_table

    os.makedirs(os.path.join(outdir, "mosaics"), exist_ok=True)
    scene = syn.make_scene(height, width, seed=seed)
    for m, r in syn.monthly_mosaics(scene).items():
        write_geotiff(r, os.path.join(outdir, "mosaics", f"month_{m:02d}.tif"))
    g = scene.grid
    coarse = type(g)(g.origin_x, g.origin_y, 2 * g.pixel_size_x, 2 * g.pixel_size_y, g.width // 2, g.height // 2,
                     g.crs_tag)
    write_geotiff(resample(scene.elevation, coarse, "bilinear"), os.path.join(outdir, "elevation.tif"))
    write_geotiff(scene.sar_pre, os.path.join(outdir, "sar_pre.tif"))
    write_geotiff(scene.sar_grow, os.path.join(outdir, "sar_grow.tif"))
    write_geotiff(syn.four_class_reference(scene), os.path.join(outdir, "landcover.tif"))
    write_polygons(scene.rice_polygons, os.path.join(outdir, "rice_polygons.txt"))
    write_polygons(scene.sampling_region, os.path.join(outdir, "sampling_region.txt"))
    syn.write_ceo_csv(syn.ceo_plots(scene, n_plots, seed=seed + 7), os.path.join(outdir, "ceo.csv"))
    shutil.copyfile(builtin_metric_table(), os.path.join(outdir, "reference_metrics.csv"))
    if survey_acres is None:
        rice_px = int(np.count_nonzero(scene.label_array == syn.RICE))
        survey_acres = round(rice_px * g.pixel_size_x * g.pixel_size_y / 4046.8564224, 1)
    path = os.path.join(outdir, "config.ini")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CONFIG_TEMPLATE.format(seed=seed, crs=g.crs_tag, variants=variants, n=per_class,
                                        patch=patch_size, epochs=epochs, survey=survey_acres))
    return path

