"""Polygon rings, the plain-text polygon list format, and rasterization.

Text format: one ring per line, ``class_id x1 y1 x2 y2 ...``; blank lines and
lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ricemap.errors import DataError, MissingFileError
from ricemap.raster.core import Band, GeoGrid, Raster


@dataclass(frozen=True, eq=False)
class Ring:
    vertices: np.ndarray  # (n, 2), closed
    class_id: int = 1

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise DataError("ring vertices must be an (n, 2) array")
        if len(v) < 4:
            raise DataError(f"ring needs at least 4 vertices (closed), got {len(v)}")
        if not np.array_equal(v[0], v[-1]):
            raise DataError("unclosed ring: first vertex must equal last")
        object.__setattr__(self, "vertices", v)

    @classmethod
    def rectangle(cls, xmin: float, ymin: float, xmax: float, ymax: float, class_id: int = 1) -> "Ring":
        return cls(np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax], [xmin, ymin]]), class_id)

    def contains(self, x, y) -> np.ndarray:
        """Even-odd point-in-polygon test (vectorised over points)."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        v = self.vertices
        for (x1, y1), (x2, y2) in zip(v[:-1], v[1:]):
            if y1 == y2:
                continue
            crosses = (y1 > y) != (y2 > y)
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (x < xint)
        return inside


@dataclass
class PolygonSet:
    rings: list[Ring] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rings)

    def __iter__(self):
        return iter(self.rings)

    def contains(self, x, y) -> np.ndarray:
        """True where a point lies inside any ring."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for ring in self.rings:
            out |= ring.contains(x, y)
        return out


def parse_polygons(lines: Iterable[str]) -> PolygonSet:
    rings = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            class_id = int(parts[0])
            coords = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise DataError(f"polygon line {lineno}: {exc}") from None
        if len(coords) % 2:
            raise DataError(f"polygon line {lineno}: odd number of coordinates")
        try:
            rings.append(Ring(np.array(coords).reshape(-1, 2), class_id))
        except DataError as exc:
            raise DataError(f"polygon line {lineno}: {exc}") from None
    return PolygonSet(rings)


def read_polygons(path: str | os.PathLike) -> PolygonSet:
    if not os.path.exists(path):
        raise MissingFileError(f"no such polygon file: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_polygons(fh)


def write_polygons(polygons: PolygonSet | Sequence[Ring], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ring in polygons:
            coords = " ".join(repr(float(c)) for c in ring.vertices.ravel())
            fh.write(f"{ring.class_id} {coords}\n")


def rasterize(polygons: PolygonSet, grid: GeoGrid, band_name: str = "class") -> Raster:
    """Burn class ids at pixel centres; later rings overwrite earlier ones; NaN elsewhere."""
    out = np.full(grid.shape, np.nan, dtype=np.float32)
    for ring in polygons:
        xmin, ymin = ring.vertices.min(axis=0)
        xmax, ymax = ring.vertices.max(axis=0)
        c0, r1 = grid.colrow(xmin, ymin)
        c1, r0 = grid.colrow(xmax, ymax)
        c0, r0 = max(int(c0), 0), max(int(r0), 0)
        c1, r1 = min(int(c1), grid.width - 1), min(int(r1), grid.height - 1)
        if c0 > c1 or r0 > r1:
            continue
        cols = np.arange(c0, c1 + 1)
        rows = np.arange(r0, r1 + 1)
        x, _ = grid.pixel_center(cols, 0)
        _, y = grid.pixel_center(0, rows)
        inside = ring.contains(x[None, :], y[:, None])
        block = out[r0:r1 + 1, c0:c1 + 1]
        block[inside] = ring.class_id
    return Raster(grid, (Band(band_name, float("nan")),), out[None])


def mask_outline(mask: np.ndarray, grid: GeoGrid, class_id: int = 1) -> PolygonSet:
    """Rectangles (one per run of set pixels in each row) covering a boolean mask exactly."""
    rings = []
    for row in range(mask.shape[0]):
        cols = np.flatnonzero(mask[row])
        if cols.size == 0:
            continue
        breaks = np.flatnonzero(np.diff(cols) > 1)
        starts = np.concatenate([[cols[0]], cols[breaks + 1]])
        ends = np.concatenate([cols[breaks], [cols[-1]]])
        for c0, c1 in zip(starts, ends):
            x0 = grid.origin_x + c0 * grid.pixel_size_x
            x1 = grid.origin_x + (c1 + 1) * grid.pixel_size_x
            y1 = grid.origin_y - row * grid.pixel_size_y
            y0 = y1 - grid.pixel_size_y
            rings.append(Ring.rectangle(x0, y0, x1, y1, class_id))
    return PolygonSet(rings)
