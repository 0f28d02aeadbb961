"""The "PSCP" raster fixture container.

Layout (all little-endian)::

    b"PSCP"  u32 version(=1)  u32 width  u32 height  u32 band_count
    f64 origin_x  f64 origin_y  f64 pixel_size_x  f64 pixel_size_y
    u16 len + UTF-8 crs_tag
    per band: u16 len + UTF-8 name, u8 nodata_flag, f64 nodata
    f32 payload, band-major then row-major
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ricemap.errors import BadMagicError, DataError, MissingFileError, TruncatedError, VersionMismatchError
from ricemap.raster.core import Band, GeoGrid, Raster

MAGIC = b"PSCP"
VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise DataError("string too long for fixture header")
    return struct.pack("<H", len(raw)) + raw


def encode_fixture(raster: Raster) -> bytes:
    g = raster.grid
    parts = [
        MAGIC,
        struct.pack("<IIII", VERSION, g.width, g.height, raster.band_count),
        struct.pack("<dddd", g.origin_x, g.origin_y, g.pixel_size_x, g.pixel_size_y),
        _pack_str(g.crs_tag),
    ]
    for b in raster.bands:
        if not b.name:
            raise DataError("empty band name")
        parts.append(_pack_str(b.name))
        flag = b.nodata is not None
        parts.append(struct.pack("<Bd", int(flag), b.nodata if flag else 0.0))
    parts.append(raster.values.astype("<f4", copy=False).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"fixture truncated at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def decode_fixture(buf: bytes) -> Raster:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise BadMagicError("not a PSCP fixture (bad magic)")
    version, width, height, nbands = r.unpack("<IIII")
    if version != VERSION:
        raise VersionMismatchError(f"fixture version {version}, expected {VERSION}")
    ox, oy, psx, psy = r.unpack("<dddd")
    crs = r.string()
    bands = []
    for _ in range(nbands):
        name = r.string()
        flag, nodata = r.unpack("<Bd")
        bands.append(Band(name, nodata if flag else None))
    n = nbands * width * height
    payload = r.take(4 * n)
    if r.pos != len(buf):
        raise TruncatedError(f"{len(buf) - r.pos} trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(nbands, height, width)
    return Raster(GeoGrid(ox, oy, psx, psy, width, height, crs), tuple(bands), values)


def write_fixture(raster: Raster, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_fixture(raster))


def read_fixture(path: str | os.PathLike) -> Raster:
    if not os.path.exists(path):
        raise MissingFileError(f"no such fixture: {path}")
    with open(path, "rb") as fh:
        return decode_fixture(fh.read())
