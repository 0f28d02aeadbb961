"""Seasonal composites, spectral indices and feature-stack assembly.

Stack band order (``S`` = season prefix ``pre_`` / ``grow_``)::

    pre_R pre_G pre_B pre_N grow_R grow_G grow_B grow_N
    [E]
    [pre_VV pre_VH grow_VV grow_VH]
    [pre_NDVI .. pre_TGI grow_NDVI .. grow_TGI]
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ricemap.errors import DataError
from ricemap.raster.core import Band, Raster, check_same_grid

INDICES = ("NDVI", "EVI", "NDWI", "SAVI", "MSAVI", "MTVI", "VARI", "TGI")
VARIANTS = ("RGBN", "RGBNE", "RGBNS", "RGBNES")
OPTICAL = ("R", "G", "B", "N")
SAR = ("VV", "VH")
SEASONS = ("pre", "grow")

DENOM_EPS = 1e-9
SAR_DB_RANGE = (-25.0, 0.0)
# Fixed ranges used to map each index onto [0, 1] inside a feature stack.
INDEX_RANGES = {
    "NDVI": (-1.0, 1.0),
    "EVI": (-1.0, 1.0),
    "NDWI": (-1.0, 1.0),
    "SAVI": (-1.0, 1.0),
    "MSAVI": (-1.0, 1.0),
    "MTVI": (-1.0, 1.0),
    "VARI": (-1.0, 1.0),
    "TGI": (-50.0, 50.0),
}

_ALIASES = {
    "r": "R", "red": "R",
    "g": "G", "green": "G",
    "b": "B", "blue": "B",
    "n": "N", "nir": "N",
}


class IndexDiagnostics:
    """Tally of singular pixels per (index, kind) where kind is
    ``zero_denominator`` or ``negative_radicand``."""

    def __init__(self) -> None:
        self.counts: Counter = Counter()

    def add(self, index: str, kind: str, n: int) -> None:
        if n:
            self.counts[(index, kind)] += int(n)

    def get(self, index: str, kind: str) -> int:
        return self.counts.get((index, kind), 0)

    def total(self, index: Optional[str] = None) -> int:
        return sum(v for (i, _), v in self.counts.items() if index is None or i == index)

    def to_dict(self) -> dict:
        out: dict = {}
        for (idx, kind), n in sorted(self.counts.items()):
            out.setdefault(idx, {})[kind] = n
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _rgbn(raster: Raster) -> dict[str, np.ndarray]:
    lookup = {}
    for i, name in enumerate(raster.names):
        key = _ALIASES.get(name.lower())
        if key is None and "_" in name:
            key = _ALIASES.get(name.rsplit("_", 1)[1].lower())
        if key is not None and key not in lookup:
            lookup[key] = i
    vals = raster.as_nan().astype(np.float64)
    out = {}
    for k in OPTICAL:
        if k not in lookup:
            raise DataError(f"missing band {k!r} (have {raster.names})")
        out[k] = vals[lookup[k]]
    return out


def _safe_div(num, den, name, diag):
    bad = np.abs(den) < DENOM_EPS
    diag.add(name, "zero_denominator", np.count_nonzero(bad))
    with np.errstate(divide="ignore", invalid="ignore"):
        res = num / np.where(bad, 1.0, den)
    return np.where(bad, 0.0, res)


def _safe_sqrt(arg, name, diag):
    neg = arg < 0
    diag.add(name, "negative_radicand", np.count_nonzero(neg))
    return np.sqrt(np.where(neg, 0.0, arg)), neg


def index_values(kind: str, R, G, B, N, diagnostics: Optional[IndexDiagnostics] = None) -> np.ndarray:
    """Evaluate one index on float64 band arrays; NaN inputs propagate."""
    diag = diagnostics if diagnostics is not None else IndexDiagnostics()
    kind = kind.upper()
    valid = ~(np.isnan(R) | np.isnan(G) | np.isnan(B) | np.isnan(N))
    # Invalid pixels get a neutral value that is non-singular for every index,
    # so they never reach the diagnostics tally.
    R, G, B, N = (np.where(valid, a, 0.5) for a in (R, G, B, N))
    if kind == "NDVI":
        out = _safe_div(N - R, N + R, kind, diag)
    elif kind == "EVI":
        out = 2.5 * _safe_div(N - R, N + 6 * R - 7.5 * B + 1, kind, diag)
    elif kind == "NDWI":
        out = _safe_div(G - N, G + N, kind, diag)
    elif kind == "SAVI":
        out = _safe_div(N - R, N + R + 0.5, kind, diag) * 1.5
    elif kind == "MSAVI":
        root, neg = _safe_sqrt((2 * N + 1) ** 2 - 8 * (N - R), kind, diag)
        out = np.where(neg, 0.0, (2 * N + 1 - root) / 2)
    elif kind == "MTVI":
        sqrt_r, neg_r = _safe_sqrt(R, kind, diag)
        radicand = (2 * N + 1) ** 2 - (6 * N - 5 * sqrt_r) - 0.5
        # A negative red band is already tallied; count the outer root separately.
        neg_outer = (radicand < 0) & ~neg_r
        diag.add(kind, "negative_radicand", np.count_nonzero(neg_outer))
        ok = (radicand >= 0) & ~neg_r
        den = np.sqrt(np.where(ok, radicand, 1.0))
        num = 1.5 * (1.2 * (N - G) - 2.5 * (R - G))
        # Zero-denominator checks only apply where the root was defined.
        out = np.where(ok, _safe_div(num, np.where(ok, den, 1.0), kind, diag), 0.0)
    elif kind == "VARI":
        out = _safe_div(G - R, G + R - B, kind, diag)
    elif kind == "TGI":
        out = (120 * (R - B) - 190 * (R - G)) / 2
    else:
        raise ValueError(f"unknown index {kind!r}; expected one of {INDICES}")
    return np.where(valid, out, np.nan)


def compute_index(kind: str, raster: Raster, diagnostics: Optional[IndexDiagnostics] = None) -> Raster:
    """Single-band raster of ``kind`` computed from the R, G, B, N bands of ``raster``.

    Pixels with a near-zero denominator (|d| < 1e-9) or a negative square-root
    argument get the fill value 0 and are tallied in ``diagnostics``.
    """
    bands = _rgbn(raster)
    vals = compute_index_arrays(kind, bands, diagnostics)
    return Raster(raster.grid, (Band(kind.upper(), float("nan")),), vals.astype(np.float32)[None])


def seasonal_composite(monthlies: Mapping[int, Raster], months: Sequence[int]) -> Raster:
    """Per-pixel, per-band median over ``months``, ignoring invalid values."""
    months = list(months)
    if not months:
        raise DataError("empty compositing window")
    missing = [m for m in months if m not in monthlies]
    if missing:
        raise DataError(f"months {missing} not provided (have {sorted(monthlies)})")
    rasters = [monthlies[m] for m in sorted(months)]
    grid = check_same_grid(*rasters)
    names = rasters[0].names
    for r in rasters[1:]:
        if r.names != names:
            raise DataError(f"band sets differ across months: {r.names} vs {names}")
    cube = np.stack([r.as_nan() for r in rasters])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(cube, axis=0)
    return Raster(grid, tuple(Band(n, float("nan")) for n in names), med.astype(np.float32))


@dataclass(frozen=True)
class FeatureStackSpec:
    variant: str = "RGBN"
    include_indices: bool = False
    pre_months: tuple[int, ...] = (3, 4, 5)
    growing_months: tuple[int, ...] = (6, 7, 8, 9)

    def __post_init__(self):
        v = self.variant.upper()
        if v not in VARIANTS:
            raise DataError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "variant", v)
        object.__setattr__(self, "pre_months", tuple(int(m) for m in self.pre_months))
        object.__setattr__(self, "growing_months", tuple(int(m) for m in self.growing_months))
        if not self.growing_months:
            raise DataError("growing-season window must not be empty")

    @property
    def uses_elevation(self) -> bool:
        return "E" in self.variant[4:]

    @property
    def uses_sar(self) -> bool:
        return "S" in self.variant[4:]

    def band_names(self) -> list[str]:
        names = [f"{s}_{b}" for s in SEASONS for b in OPTICAL]
        if self.uses_elevation:
            names.append("E")
        if self.uses_sar:
            names += [f"{s}_{p}" for s in SEASONS for p in SAR]
        if self.include_indices:
            names += [f"{s}_{i}" for s in SEASONS for i in INDICES]
        return names

    @property
    def channels(self) -> int:
        return len(self.band_names())


@dataclass
class FeatureSources:
    """Inputs for a feature stack, all on one grid.

    ``optical`` maps month number to an R, G, B, N reflectance raster in [0, 1]
    (apply :func:`scale_reflectance` to provider integers first).  Either
    monthly mosaics or precomputed composites may be given: ``pre_optical`` /
    ``grow_optical`` take precedence when set.  SAR rasters carry VV and VH in dB.
    """

    optical: Mapping[int, Raster] = field(default_factory=dict)
    pre_optical: Optional[Raster] = None
    grow_optical: Optional[Raster] = None
    elevation: Optional[Raster] = None
    sar_pre: Optional[Raster] = None
    sar_grow: Optional[Raster] = None


def scale_reflectance(raster: Raster, scale: float = 1e-4) -> Raster:
    """Multiply provider digital numbers by ``scale`` (invalid pixels become NaN)."""
    vals = raster.as_nan() * np.float32(scale)
    return Raster(raster.grid, tuple(Band(b.name, float("nan")) for b in raster.bands), vals)


def _minmax(a: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        lo, hi = np.nanmin(a), np.nanmax(a)
    if not np.isfinite(lo) or hi == lo:
        return np.where(np.isnan(a), np.nan, 0.0)
    return (a - lo) / (hi - lo)


def _sar_unit(a: np.ndarray) -> np.ndarray:
    lo, hi = SAR_DB_RANGE
    return (np.clip(a, lo, hi) - lo) / (hi - lo)


def build_feature_stack(spec: FeatureStackSpec, sources: FeatureSources,
                        diagnostics: Optional[IndexDiagnostics] = None) -> Raster:
    """Assemble the normalised feature stack for ``spec.variant``."""
    composites = {}
    for season, months, given in (
        ("pre", spec.pre_months, sources.pre_optical),
        ("grow", spec.growing_months, sources.grow_optical),
    ):
        if given is None:
            if not sources.optical:
                raise DataError(f"missing optical source for {season} season")
            given = seasonal_composite(sources.optical, months)
        composites[season] = given
    required = [composites["pre"], composites["grow"]]
    if spec.uses_elevation:
        if sources.elevation is None:
            raise DataError(f"variant {spec.variant} needs an elevation source")
        required.append(sources.elevation)
    if spec.uses_sar:
        if sources.sar_pre is None or sources.sar_grow is None:
            raise DataError(f"variant {spec.variant} needs pre and growing SAR sources")
        required += [sources.sar_pre, sources.sar_grow]
    grid = check_same_grid(*required)

    layers: list[np.ndarray] = []
    rgbn = {s: _rgbn(composites[s]) for s in SEASONS}
    for s in SEASONS:
        layers += [np.clip(rgbn[s][b], 0.0, 1.0) for b in OPTICAL]
    if spec.uses_elevation:
        layers.append(_minmax(sources.elevation.as_nan()[0].astype(np.float64)))
    if spec.uses_sar:
        for r in (sources.sar_pre, sources.sar_grow):
            vals = r.as_nan().astype(np.float64)
            layers += [_sar_unit(vals[r.index(p)]) for p in SAR]
    if spec.include_indices:
        for s in SEASONS:
            b = rgbn[s]
            for kind in INDICES:
                raw = compute_index_arrays(kind, b, diagnostics, season=s)
                lo, hi = INDEX_RANGES[kind]
                layers.append((np.clip(raw, lo, hi) - lo) / (hi - lo))
    values = np.stack(layers).astype(np.float32)
    return Raster(grid, tuple(Band(n, float("nan")) for n in spec.band_names()), values)


def compute_index_arrays(kind: str, bands: Mapping[str, np.ndarray],
                         diagnostics: Optional[IndexDiagnostics] = None, season: str = "") -> np.ndarray:
    local = IndexDiagnostics()
    out = index_values(kind, bands["R"], bands["G"], bands["B"], bands["N"], local)
    if diagnostics is not None:
        for (idx, k), n in local.counts.items():
            diagnostics.counts[(f"{season}_{idx}" if season else idx, k)] += n
    return out
