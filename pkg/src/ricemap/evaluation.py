"""Rice products from probability maps: binary maps, agreement, acreage, point validation."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ricemap.errors import DataError, GridMismatchError, MissingFileError
from ricemap.nn.metrics import f1_score
from ricemap.raster.core import Band, Raster, check_same_grid
from ricemap.raster.vector import PolygonSet
from ricemap.stratify import CLASSES

SQ_METERS_PER_ACRE = 4046.8564224
LABELS = ("rice", "non-rice", "mixed")
_LABEL_ALIASES = {
    "rice": "rice",
    "nonrice": "non-rice",
    "non-rice": "non-rice",
    "non_rice": "non-rice",
    "non rice": "non-rice",
    "mixed": "mixed",
}
EXPORT_COLUMNS = ("plot_id", "label", "p_rice", "p_cropland", "p_forest", "p_builtup", "p_other")


# --------------------------------------------------------------------------
# Map products
# --------------------------------------------------------------------------

def rice_binary(probabilities: Raster) -> Raster:
    """1 where rice (class 0) is the argmax, ties going to the lowest class; else 0."""
    if probabilities.band_count != len(CLASSES):
        raise DataError(f"expected {len(CLASSES)} probability bands, got {probabilities.band_count}")
    p = probabilities.as_nan()
    valid = ~np.isnan(p).any(axis=0)
    # np.argmax returns the first maximum, which is the lowest class index.
    rice = np.argmax(np.where(np.isnan(p), -np.inf, p), axis=0) == 0
    out = np.where(valid, rice.astype(np.float32), np.nan).astype(np.float32)
    return Raster(probabilities.grid, (Band("rice", float("nan")),), out[None])


def _binary_values(r: Raster) -> np.ndarray:
    if r.band_count != 1:
        raise DataError(f"binary map must have one band, got {r.band_count}")
    v = r.as_nan()[0]
    finite = v[~np.isnan(v)]
    if not np.isin(finite, (0.0, 1.0)).all():
        raise DataError("agreement input is not binary (values other than 0/1 present)")
    return v


def agreement(maps: Sequence[Raster]) -> Raster:
    """Per-pixel count of maps marking rice; NaN where any map is invalid."""
    if not maps:
        raise DataError("agreement needs at least one map")
    try:
        check_same_grid(*maps)
    except DataError as exc:
        raise GridMismatchError(f"agreement inputs are not co-registered: {exc}") from exc
    total = np.zeros(maps[0].grid.shape, dtype=np.float32)
    for m in maps:
        total += _binary_values(m)
    return Raster(maps[0].grid, (Band("agreement", float("nan")),), total[None])


def area_acres(binary: Raster) -> float:
    """Acreage of the 1-pixels; the grid must be projected in metres."""
    g = binary.grid
    if g.is_geographic:
        raise DataError(f"area needs a projected metric grid, got {g.crs_tag!r}")
    count = int(np.count_nonzero(binary.as_nan()[0] == 1.0))
    return count * abs(g.pixel_size_x) * abs(g.pixel_size_y) / SQ_METERS_PER_ACRE


def compare_to_survey(map_acres: float, survey_acres: float) -> float:
    """Signed percent difference of the mapped area from the survey figure."""
    if survey_acres <= 0:
        raise DataError("survey acreage must be positive")
    return 100.0 * (map_acres - survey_acres) / survey_acres


# --------------------------------------------------------------------------
# Validation plots
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationPlot:
    plot_id: str
    x: float
    y: float
    label: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise DataError(f"plot {self.plot_id}: label {self.label!r} not in {LABELS}")
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise DataError(f"plot {self.plot_id}: non-finite coordinates")


def normalize_label(raw: str) -> Optional[str]:
    key = " ".join(raw.strip().lower().split())
    return _LABEL_ALIASES.get(key)


def load_ceo_csv(path: str | os.PathLike) -> list[ValidationPlot]:
    """Parse an interpretation export with columns plot_id, x|lon, y|lat, label.

    Labels are case- and whitespace-insensitive.  Every bad row is reported
    (by 1-based line number, header = line 1) in a single error.
    """
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty CSV") from None
        cols = {}
        for key, options in (("plot_id", ("plot_id",)), ("x", ("x", "lon")), ("y", ("y", "lat")),
                             ("label", ("label",))):
            found = [o for o in options if o in header]
            if not found:
                raise DataError(f"{path}: missing column {'/'.join(options)}")
            cols[key] = header.index(found[0])
        plots, problems = [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                label = normalize_label(row[cols["label"]])
                if label is None:
                    raise ValueError(f"unknown label {row[cols['label']]!r}")
                plots.append(ValidationPlot(row[cols["plot_id"]].strip(), float(row[cols["x"]]),
                                            float(row[cols["y"]]), label))
            except (ValueError, IndexError) as exc:
                problems.append(f"row {line}: {exc}")
    if problems:
        raise DataError(f"{path}: " + "; ".join(problems))
    return plots


def exclude_region(plots: Sequence[ValidationPlot], region: Optional[PolygonSet]) -> tuple[list[ValidationPlot], int]:
    """Drop plots inside ``region``; returns (kept plots, removed count)."""
    if region is None or not len(region) or not plots:
        return list(plots), 0
    x = np.array([p.x for p in plots])
    y = np.array([p.y for p in plots])
    inside = region.contains(x, y)
    kept = [p for p, i in zip(plots, inside) if not i]
    return kept, int(inside.sum())


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn, "accuracy": self.accuracy,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass
class ValidationResult:
    counts: ConfusionCounts
    excluded_mixed: int
    evaluated: int
    export: list[dict]  # one row per plot, EXPORT_COLUMNS

    def write_export(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EXPORT_COLUMNS)
            for row in self.export:
                w.writerow([row["plot_id"], row["label"]] + [_fmt(row[c]) for c in EXPORT_COLUMNS[2:]])

    def summary(self) -> dict:
        d = self.counts.as_dict()
        d.update(excluded_mixed=self.excluded_mixed, evaluated=self.evaluated)
        return d


def _fmt(v: float) -> str:
    return "nan" if np.isnan(v) else f"{v:.6f}"


def validate(plots: Sequence[ValidationPlot], binary: Raster,
             probabilities: Optional[Raster] = None) -> ValidationResult:
    """Rice vs non-rice confusion at the pixel containing each plot centre.

    Mixed plots are excluded and counted.  Every plot, mixed ones included,
    gets a row in the probability export when ``probabilities`` is given.
    """
    if probabilities is not None:
        check_same_grid(binary, probabilities)
    g = binary.grid
    b = binary.as_nan()[0]
    probs = probabilities.as_nan() if probabilities is not None else None
    outside = []
    tp = fp = tn = fn = mixed = 0
    export = []
    for p in plots:
        col, row = g.colrow(p.x, p.y)
        col, row = int(col), int(row)
        if not g.contains_pixel(col, row):
            outside.append(p.plot_id)
            continue
        vec = probs[:, row, col] if probs is not None else np.full(len(CLASSES), np.nan)
        export.append({"plot_id": p.plot_id, "label": p.label,
                       **{c: float(v) for c, v in zip(EXPORT_COLUMNS[2:], vec)}})
        if p.label == "mixed":
            mixed += 1
            continue
        pred = b[row, col]
        if np.isnan(pred):
            raise DataError(f"plot {p.plot_id} falls on an invalid map pixel")
        truth = p.label == "rice"
        if pred == 1.0:
            tp, fp = (tp + 1, fp) if truth else (tp, fp + 1)
        else:
            fn, tn = (fn + 1, tn) if truth else (fn, tn + 1)
    if outside:
        raise DataError(f"{len(outside)} plots outside the raster extent: {', '.join(outside[:10])}")
    counts = ConfusionCounts(tp, fp, tn, fn)
    return ValidationResult(counts, mixed, counts.total, export)


# --------------------------------------------------------------------------
# Published metric table reproduction
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricRow:
    table: str
    model: str
    precision: float
    recall: float
    f1: float


def read_metric_rows(path: str | os.PathLike) -> list[MetricRow]:
    """CSV with columns table, model, precision, recall, f1."""
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, r in enumerate(csv.DictReader(fh), start=2):
            try:
                rows.append(MetricRow(r["table"], r["model"], float(r["precision"]), float(r["recall"]),
                                      float(r["f1"])))
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}: row {i}: {exc}") from None
    return rows


def reproduce_f1(rows: Sequence[MetricRow], tolerance: float = 5e-5) -> list[dict]:
    out = []
    for r in rows:
        f1 = f1_score(r.precision, r.recall)
        out.append({"table": r.table, "model": r.model, "precision": r.precision, "recall": r.recall,
                    "f1_reported": r.f1, "f1_computed": f1, "abs_diff": abs(f1 - r.f1),
                    "match": abs(f1 - r.f1) <= tolerance})
    return out


def write_f1_reproduction(results: Sequence[dict], path: str | os.PathLike) -> None:
    cols = ("table", "model", "precision", "recall", "f1_reported", "f1_computed", "abs_diff", "match")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in results:
            w.writerow([r["table"], r["model"], f"{r['precision']:.4f}", f"{r['recall']:.4f}",
                        f"{r['f1_reported']:.4f}", f"{r['f1_computed']:.6f}", f"{r['abs_diff']:.6f}",
                        "yes" if r["match"] else "no"])
