"""Nearest and bilinear resampling between grids that share a CRS."""

from __future__ import annotations

import numpy as np

from ricemap.errors import CRSMismatchError, DataError
from ricemap.raster.core import Band, GeoGrid, Raster


def _overlaps(a: GeoGrid, b: GeoGrid) -> bool:
    ax0, ay0, ax1, ay1 = a.bounds
    bx0, by0, bx1, by1 = b.bounds
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


def resample(raster: Raster, target: GeoGrid, method: str = "nearest") -> Raster:
    """Sample ``raster`` at the pixel centres of ``target``.

    Target pixels whose centre lies outside the source extent become NaN.
    Bilinear interpolation drops invalid neighbours and renormalises the
    remaining weights; a pixel with no valid neighbour is NaN.
    """
    src = raster.grid
    if src.crs_tag != target.crs_tag:
        raise CRSMismatchError(f"cannot resample {src.crs_tag!r} onto {target.crs_tag!r}")
    if not _overlaps(src, target):
        raise DataError("target grid does not overlap the source raster")
    if method not in ("nearest", "bilinear"):
        raise ValueError(f"unknown resampling method {method!r}")

    cols = np.arange(target.width)
    rows = np.arange(target.height)
    x, _ = target.pixel_center(cols, 0)
    _, y = target.pixel_center(0, rows)
    # Continuous source coordinates in pixel units, pixel (0,0) spanning [0,1).
    fx = (x - src.origin_x) / src.pixel_size_x
    fy = (src.origin_y - y) / src.pixel_size_y
    inside_x = (fx >= 0) & (fx < src.width)
    inside_y = (fy >= 0) & (fy < src.height)
    inside = inside_y[:, None] & inside_x[None, :]

    vals = raster.as_nan()
    out = np.full((raster.band_count, target.height, target.width), np.nan, dtype=np.float32)
    if method == "nearest":
        ci = np.clip(np.floor(fx).astype(np.int64), 0, src.width - 1)
        ri = np.clip(np.floor(fy).astype(np.int64), 0, src.height - 1)
        sampled = vals[:, ri[:, None], ci[None, :]]
        out[:, inside] = sampled[:, inside]
    else:
        # Centre-based coordinates: integer values fall exactly on pixel centres.
        cx = fx - 0.5
        cy = fy - 0.5
        c0 = np.floor(cx).astype(np.int64)
        r0 = np.floor(cy).astype(np.int64)
        wx1 = cx - c0
        wy1 = cy - r0
        acc = np.zeros((raster.band_count, target.height, target.width), dtype=np.float64)
        wsum = np.zeros_like(acc)
        for dr, wy in ((0, 1.0 - wy1), (1, wy1)):
            rr = r0 + dr
            rvalid = (rr >= 0) & (rr < src.height)
            rr_c = np.clip(rr, 0, src.height - 1)
            for dc, wx in ((0, 1.0 - wx1), (1, wx1)):
                cc = c0 + dc
                cvalid = (cc >= 0) & (cc < src.width)
                cc_c = np.clip(cc, 0, src.width - 1)
                v = vals[:, rr_c[:, None], cc_c[None, :]].astype(np.float64)
                w = (wy[:, None] * wx[None, :]) * (rvalid[:, None] & cvalid[None, :])
                w = np.broadcast_to(w, v.shape) * ~np.isnan(v)
                acc += np.where(w > 0, v, 0.0) * w
                wsum += w
        with np.errstate(invalid="ignore", divide="ignore"):
            res = acc / wsum
        res[wsum == 0] = np.nan
        out[:, inside] = res[:, inside].astype(np.float32)
    bands = tuple(Band(b.name, float("nan")) for b in raster.bands)
    return Raster(target, bands, out)
