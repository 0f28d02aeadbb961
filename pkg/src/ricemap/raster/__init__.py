"""Georeferenced rasters: containers, I/O, resampling, windowing, rasterization."""

from ricemap.raster.core import Band, GeoGrid, Raster, check_same_grid, stack, window
from ricemap.raster.fixture import read_fixture, write_fixture
from ricemap.raster.geotiff import read_geotiff, write_geotiff
from ricemap.raster.quicklook import class_quicklook
from ricemap.raster.resample import resample
from ricemap.raster.vector import PolygonSet, Ring, mask_outline, rasterize, read_polygons, write_polygons

__all__ = [
    "Band",
    "GeoGrid",
    "PolygonSet",
    "Raster",
    "Ring",
    "check_same_grid",
    "class_quicklook",
    "mask_outline",
    "rasterize",
    "read_fixture",
    "read_geotiff",
    "read_polygons",
    "resample",
    "stack",
    "window",
    "write_fixture",
    "write_geotiff",
    "write_polygons",
]
