"""GeoTIFF input/output on top of ``tifffile``.

Only north-up affine georeferencing is supported (ModelPixelScale +
ModelTiepoint, or a rotation-free ModelTransformation).  Payloads may be
uncompressed or deflate-compressed.
"""

from __future__ import annotations

import os
import re
import xml.etree.ElementTree as ET
from typing import Optional

import numpy as np
import tifffile

from ricemap.errors import (
    DataError,
    FormatError,
    MissingFileError,
    MissingGeotransformError,
    UnsupportedCompressionError,
)
from ricemap.raster.core import Band, GeoGrid, Raster

TAG_PIXEL_SCALE = 33550
TAG_TIEPOINT = 33922
TAG_TRANSFORMATION = 34264
TAG_GEOKEYS = 34735
TAG_GEOASCII = 34737
TAG_GDAL_METADATA = 42112
TAG_GDAL_NODATA = 42113

KEY_MODEL_TYPE = 1024
KEY_RASTER_TYPE = 1025
KEY_CITATION = 1026
KEY_GEOGRAPHIC_TYPE = 2048
KEY_PROJECTED_TYPE = 3072
USER_DEFINED = 32767
RASTER_PIXEL_IS_POINT = 2

_SUPPORTED_COMPRESSION = {1, 8, 32946}


def _geokeys(tags) -> dict[int, object]:
    if TAG_GEOKEYS not in tags:
        return {}
    raw = list(tags[TAG_GEOKEYS].value)
    ascii_params = tags[TAG_GEOASCII].value if TAG_GEOASCII in tags else ""
    keys = {}
    n = raw[3]
    for i in range(n):
        key, loc, count, off = raw[4 + 4 * i: 8 + 4 * i]
        if loc == 0:
            keys[key] = off
        elif loc == TAG_GEOASCII:
            keys[key] = ascii_params[off:off + count].rstrip("|").rstrip("\x00")
    return keys


def _crs_tag(keys: dict) -> str:
    proj = keys.get(KEY_PROJECTED_TYPE)
    if isinstance(proj, int) and proj not in (0, USER_DEFINED):
        return f"EPSG:{proj}"
    if keys.get(KEY_MODEL_TYPE) == 2:
        geog = keys.get(KEY_GEOGRAPHIC_TYPE)
        if isinstance(geog, int) and geog not in (0, USER_DEFINED):
            return f"EPSG:{geog}"
        return "GEOGRAPHIC"
    cit = keys.get(KEY_CITATION)
    return cit if isinstance(cit, str) else ""


def _band_names(tags, count: int) -> list[str]:
    names = [f"band_{i + 1}" for i in range(count)]
    if TAG_GDAL_METADATA not in tags:
        return names
    try:
        root = ET.fromstring(tags[TAG_GDAL_METADATA].value)
    except ET.ParseError:
        return names
    for item in root.iter("Item"):
        if item.get("role") == "description" and item.get("sample") is not None:
            idx = int(item.get("sample"))
            if 0 <= idx < count and item.text:
                names[idx] = item.text
    return names


def read_geotiff(path: str | os.PathLike) -> Raster:
    """Read a single- or multi-band GeoTIFF as a float32 Raster."""
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")
    try:
        return _read(path)
    except tifffile.TiffFileError as exc:
        raise FormatError(f"{path}: unreadable TIFF ({exc})") from None


def _read(path: str | os.PathLike) -> Raster:
    with tifffile.TiffFile(path) as tif:
        page = tif.pages[0]
        comp = int(page.compression)
        if comp not in _SUPPORTED_COMPRESSION:
            raise UnsupportedCompressionError(
                f"{path}: compression {page.compression!r} not supported (need none or deflate)")
        tags = page.tags
        keys = _geokeys(tags)
        if TAG_TRANSFORMATION in tags:
            m = tags[TAG_TRANSFORMATION].value
            if abs(m[1]) > 0 or abs(m[4]) > 0:
                raise MissingGeotransformError(f"{path}: rotated geotransforms are not supported")
            psx, psy = m[0], -m[5]
            ox, oy = m[3], m[7]
        elif TAG_PIXEL_SCALE in tags and TAG_TIEPOINT in tags:
            sx, sy = tags[TAG_PIXEL_SCALE].value[:2]
            i, j, _, x, y, _ = tags[TAG_TIEPOINT].value[:6]
            psx, psy = sx, sy
            ox, oy = x - i * sx, y + j * sy
        else:
            raise MissingGeotransformError(f"{path}: no affine geotransform tags")
        if keys.get(KEY_RASTER_TYPE) == RASTER_PIXEL_IS_POINT:
            ox -= psx / 2
            oy += psy / 2
        arr = page.asarray()
        if page.samplesperpixel > 1:
            if page.planarconfig == tifffile.PLANARCONFIG.CONTIG:
                arr = np.moveaxis(arr, -1, 0)
        else:
            arr = arr[None] if arr.ndim == 2 else arr
        nodata: Optional[float] = None
        if TAG_GDAL_NODATA in tags:
            txt = str(tags[TAG_GDAL_NODATA].value).strip().rstrip("\x00")
            if txt:
                nodata = float(txt)
        names = _band_names(tags, arr.shape[0])
    grid = GeoGrid(float(ox), float(oy), float(psx), float(psy), arr.shape[2], arr.shape[1], _crs_tag(keys))
    return Raster(grid, tuple(Band(n, nodata) for n in names), arr.astype(np.float32))


def _gdal_metadata(names: list[str]) -> str:
    items = "".join(
        f'<Item name="DESCRIPTION" sample="{i}" role="description">{n}</Item>'
        for i, n in enumerate(names))
    return f"<GDALMetadata>{items}</GDALMetadata>"


def write_geotiff(raster: Raster, path: str | os.PathLike, compress: bool = True) -> None:
    """Write a band-separate float32 GeoTIFF (deflate-compressed by default)."""
    g = raster.grid
    m = re.fullmatch(r"EPSG:(\d+)", g.crs_tag.strip(), flags=re.IGNORECASE)
    geoascii = ""
    if m:
        code = int(m.group(1))
        geographic = g.is_geographic
        crs_keys = [KEY_GEOGRAPHIC_TYPE if geographic else KEY_PROJECTED_TYPE, 0, 1, code]
    else:
        geographic = False
        geoascii = g.crs_tag + "|"
        crs_keys = [KEY_CITATION, TAG_GEOASCII, len(geoascii), 0]
    keys = [KEY_MODEL_TYPE, 0, 1, 2 if geographic else 1, KEY_RASTER_TYPE, 0, 1, 1, *crs_keys]
    geokeys = [1, 1, 0, len(keys) // 4, *keys]
    extratags = [
        (TAG_PIXEL_SCALE, "d", 3, (g.pixel_size_x, g.pixel_size_y, 0.0), True),
        (TAG_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, g.origin_x, g.origin_y, 0.0), True),
        (TAG_GEOKEYS, "H", len(geokeys), geokeys, True),
        (TAG_GDAL_METADATA, "s", 0, _gdal_metadata(raster.names), True),
    ]
    if geoascii:
        extratags.append((TAG_GEOASCII, "s", 0, geoascii, True))
    nodatas = {b.nodata for b in raster.bands if b.nodata is not None}
    if len(nodatas) > 1 and not all(np.isnan(v) for v in nodatas):
        raise DataError("GeoTIFF supports a single nodata value for all bands")
    if nodatas:
        v = next(iter(nodatas))
        extratags.append((TAG_GDAL_NODATA, "s", 0, "nan" if np.isnan(v) else repr(float(v)), True))
    data = raster.values if raster.band_count > 1 else raster.values[0]
    tifffile.imwrite(
        path,
        data.astype(np.float32),
        photometric="minisblack",
        planarconfig="separate" if raster.band_count > 1 else None,
        compression="zlib" if compress else None,
        extratags=extratags,
        metadata=None,
        software=False,
    )
