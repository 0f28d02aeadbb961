import sys

import numpy as np
import pytest

from ricemap.raster.core import Band, GeoGrid, Raster


def make_grid(width=4, height=3, size=10.0, crs="EPSG:32645", x0=1000.0, y0=5000.0):
    return GeoGrid(x0, y0, size, size, width, height, crs)


def make_raster(values, names=None, nodata=None, grid=None):
    values = np.asarray(values, dtype=np.float32)
    if values.ndim == 2:
        values = values[None]
    b, h, w = values.shape
    grid = grid or make_grid(w, h)
    names = names or [f"b{i}" for i in range(b)]
    return Raster(grid, tuple(Band(n, nodata) for n in names), values)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
