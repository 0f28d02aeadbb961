"""Georeferenced grid and raster containers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ricemap.errors import CRSMismatchError, DataError, GridMismatchError

# EPSG codes of common geographic (degree-based) CRSs.
_GEOGRAPHIC_EPSG = {4326, 4269, 4258, 4283, 4612, 4674, 4019, 4030}


@dataclass(frozen=True)
class GeoGrid:
    """North-up pixel grid in a projected CRS.

    ``origin_x``/``origin_y`` locate the top-left corner of the top-left
    pixel; rows increase southward, so ``pixel_size_y`` is stored positive.
    """

    origin_x: float
    origin_y: float
    pixel_size_x: float
    pixel_size_y: float
    width: int
    height: int
    crs_tag: str

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DataError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not (self.pixel_size_x > 0 and self.pixel_size_y > 0):
            raise DataError("pixel sizes must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax)."""
        return (
            self.origin_x,
            self.origin_y - self.height * self.pixel_size_y,
            self.origin_x + self.width * self.pixel_size_x,
            self.origin_y,
        )

    @property
    def is_geographic(self) -> bool:
        tag = self.crs_tag.strip().upper()
        if tag.startswith("GEOG"):
            return True
        if tag.startswith("EPSG:"):
            try:
                return int(tag[5:]) in _GEOGRAPHIC_EPSG
            except ValueError:
                return False
        return False

    def pixel_center(self, col, row):
        """Map coordinates of pixel centres (vectorised)."""
        x = self.origin_x + (np.asarray(col) + 0.5) * self.pixel_size_x
        y = self.origin_y - (np.asarray(row) + 0.5) * self.pixel_size_y
        return x, y

    def colrow(self, x, y):
        """Integer (col, row) of the pixel containing each point; may lie outside the grid."""
        col = np.floor((np.asarray(x, dtype=np.float64) - self.origin_x) / self.pixel_size_x)
        row = np.floor((self.origin_y - np.asarray(y, dtype=np.float64)) / self.pixel_size_y)
        return col.astype(np.int64), row.astype(np.int64)

    def contains_pixel(self, col, row):
        col = np.asarray(col)
        row = np.asarray(row)
        return (col >= 0) & (col < self.width) & (row >= 0) & (row < self.height)

    def subgrid(self, col: int, row: int, width: int, height: int) -> "GeoGrid":
        return replace(
            self,
            origin_x=self.origin_x + col * self.pixel_size_x,
            origin_y=self.origin_y - row * self.pixel_size_y,
            width=width,
            height=height,
        )

    def alignable(self, other: "GeoGrid", tol: float = 1e-6) -> bool:
        """Same CRS, same pixel size, and origins an integer number of pixels apart."""
        if self.crs_tag != other.crs_tag:
            return False
        if not (math.isclose(self.pixel_size_x, other.pixel_size_x, rel_tol=1e-9)
                and math.isclose(self.pixel_size_y, other.pixel_size_y, rel_tol=1e-9)):
            return False
        dx = (other.origin_x - self.origin_x) / self.pixel_size_x
        dy = (self.origin_y - other.origin_y) / self.pixel_size_y
        return abs(dx - round(dx)) < tol and abs(dy - round(dy)) < tol

    def same_as(self, other: "GeoGrid") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.crs_tag == other.crs_tag
            and self.alignable(other)
            and round((other.origin_x - self.origin_x) / self.pixel_size_x) == 0
            and round((self.origin_y - other.origin_y) / self.pixel_size_y) == 0
        )


@dataclass(frozen=True)
class Band:
    name: str
    nodata: Optional[float] = None


@dataclass(frozen=True, eq=False)
class Raster:
    """Multi-band float32 raster, values shaped (bands, height, width).

    A pixel is invalid in a band when it is NaN or equals that band's declared
    nodata value.  Operations in this package emit NaN for invalid output
    pixels and declare NaN as the nodata value.
    """

    grid: GeoGrid
    bands: tuple[Band, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.dtype != np.float32:
            vals = vals.astype(np.float32)
        if vals.ndim == 2:
            vals = vals[None]
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "bands", tuple(
            b if isinstance(b, Band) else Band(*b) if isinstance(b, tuple) else Band(str(b))
            for b in self.bands))
        if vals.shape != (len(self.bands), self.grid.height, self.grid.width):
            raise DataError(
                f"values shape {vals.shape} does not match "
                f"{len(self.bands)} bands x {self.grid.height} x {self.grid.width}")
        names = [b.name for b in self.bands]
        if any(not n for n in names):
            raise DataError("empty band name")
        if len(set(names)) != len(names):
            raise DataError(f"duplicate band names: {names}")

    @classmethod
    def from_array(cls, grid: GeoGrid, values: np.ndarray, names: Sequence[str],
                   nodata: Optional[float] = float("nan")) -> "Raster":
        return cls(grid, tuple(Band(n, nodata) for n in names), values)

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.bands]

    @property
    def band_count(self) -> int:
        return len(self.bands)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"band {name!r} not present (have {self.names})") from None

    def band(self, name: str) -> np.ndarray:
        return self.values[self.index(name)]

    def valid_mask(self) -> np.ndarray:
        """Boolean (bands, H, W): True where a value is usable."""
        mask = ~np.isnan(self.values)
        for i, b in enumerate(self.bands):
            if b.nodata is not None and not math.isnan(b.nodata):
                mask[i] &= self.values[i] != np.float32(b.nodata)
        return mask

    def as_nan(self) -> np.ndarray:
        """Copy of the values with every invalid pixel set to NaN."""
        out = self.values.copy()
        out[~self.valid_mask()] = np.nan
        return out

    def equals(self, other: "Raster") -> bool:
        """Field-for-field and byte-for-byte equality."""
        if self.grid != other.grid or len(self.bands) != len(other.bands):
            return False
        for a, b in zip(self.bands, other.bands):
            if a.name != b.name:
                return False
            if (a.nodata is None) != (b.nodata is None):
                return False
            if a.nodata is not None and np.float64(a.nodata).tobytes() != np.float64(b.nodata).tobytes():
                return False
        return self.values.tobytes() == other.values.tobytes()


def check_same_grid(*rasters: Raster) -> GeoGrid:
    grid = rasters[0].grid
    for r in rasters[1:]:
        if r.grid.crs_tag != grid.crs_tag:
            raise CRSMismatchError(f"CRS {r.grid.crs_tag!r} != {grid.crs_tag!r}")
        if not r.grid.same_as(grid):
            raise GridMismatchError(f"grid mismatch: {r.grid} vs {grid}")
    return grid


def stack(*rasters: Raster) -> Raster:
    """Concatenate bands of co-registered rasters in argument order."""
    if not rasters:
        raise DataError("stack needs at least one raster")
    grid = check_same_grid(*rasters)
    bands = tuple(b for r in rasters for b in r.bands)
    return Raster(grid, bands, np.concatenate([r.values for r in rasters], axis=0))


def window(raster: Raster, col: int, row: int, width: int, height: int) -> Raster:
    """Sub-raster whose top-left pixel is (col, row) of ``raster``."""
    g = raster.grid
    if col < 0 or row < 0 or width < 1 or height < 1 or col + width > g.width or row + height > g.height:
        raise DataError(
            f"window ({col}, {row}, {width}, {height}) out of bounds for {g.width}x{g.height}")
    vals = raster.values[:, row:row + height, col:col + width].copy()
    return Raster(g.subgrid(col, row, width, height), raster.bands, vals)
