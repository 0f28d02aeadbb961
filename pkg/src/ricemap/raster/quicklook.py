"""8-bit palette PNG previews of class maps."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from ricemap.raster.core import Raster

# rice, cropland, forest, built-up, other
CLASS_PALETTE = [
    (220, 30, 30),
    (255, 160, 0),
    (20, 140, 40),
    (128, 128, 128),
    (30, 80, 220),
]
NODATA_INDEX = 255


def class_quicklook(raster: Raster, path: str | os.PathLike, band: int = 0) -> None:
    """Write band ``band`` (class ids 0..4) as a paletted PNG; invalid pixels are black."""
    vals = raster.values[band]
    valid = raster.valid_mask()[band] & (vals >= 0) & (vals < len(CLASS_PALETTE))
    idx = np.full(vals.shape, NODATA_INDEX, dtype=np.uint8)
    idx[valid] = vals[valid].astype(np.uint8)
    img = Image.fromarray(idx, mode="P")
    palette = [c for rgb in CLASS_PALETTE for c in rgb]
    palette += [0, 0, 0] * (256 - len(CLASS_PALETTE))
    img.putpalette(palette)
    img.save(path, format="PNG", optimize=False)
