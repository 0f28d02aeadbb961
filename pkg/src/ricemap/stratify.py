"""Weak labels and training-sample generation.

K-means clusters of the imagery are remapped to a reference land-cover
product, rice polygons are burned on top, and fixed per-class point counts
are drawn from the resulting 5-class label raster.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ricemap.errors import DataError, GridMismatchError
from ricemap.raster.core import Band, Raster, check_same_grid
from ricemap.raster.vector import PolygonSet, rasterize

logger = logging.getLogger(__name__)

CLASSES = ("rice", "cropland", "forest", "built-up", "other")
RICE = 0
# Remapped cluster classes, before rice is merged in.
FOUR_CLASSES = ("cropland", "forest", "built-up", "other")

SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST, SPLIT_NONE = 0, 1, 2, 255


def class_id(name: str, scheme: Sequence[str] = CLASSES) -> int:
    key = name.strip().lower().replace("_", "-").replace(" ", "-")
    if key == "builtup":
        key = "built-up"
    try:
        return list(scheme).index(key)
    except ValueError:
        raise DataError(f"unknown class {name!r}; expected one of {list(scheme)}") from None


# --------------------------------------------------------------------------
# K-means
# --------------------------------------------------------------------------

def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Exact squared distances (N, k); written out so equidistant ties stay exact."""
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _nearest(x: np.ndarray, centers: np.ndarray, chunk: int = 65536) -> tuple[np.ndarray, np.ndarray]:
    labels = np.empty(len(x), dtype=np.int64)
    dmin = np.empty(len(x), dtype=np.float64)
    for s in range(0, len(x), chunk):
        d = _sq_dists(x[s:s + chunk], centers)
        labels[s:s + chunk] = np.argmin(d, axis=1)
        dmin[s:s + chunk] = d[np.arange(len(d)), labels[s:s + chunk]]
    return labels, dmin


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = _sq_dists(x, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, _sq_dists(x, x[idx][None])[:, 0])
    return np.array(centers)


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    sse_history: list[float]
    iterations: int


def lloyd(x: np.ndarray, init: np.ndarray, max_iter: int = 100, tol: float = 1e-4) -> KMeansResult:
    """Lloyd iterations from ``init``.

    Stops when every centre moves less than ``tol`` relative to its previous
    norm, or after ``max_iter`` updates.  An emptied cluster keeps its centre.
    ``sse_history[i]`` is the within-cluster SSE after the i-th assignment.
    """
    centers = init.astype(np.float64).copy()
    history = []
    labels, dmin = _nearest(x, centers)
    history.append(float(dmin.sum()))
    it = 0
    for it in range(1, max_iter + 1):
        new = centers.copy()
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        counts = np.bincount(labels, minlength=len(centers))
        nz = counts > 0
        new[nz] = sums[nz] / counts[nz, None]
        move = np.linalg.norm(new - centers, axis=1)
        scale = np.maximum(np.linalg.norm(centers, axis=1), 1e-12)
        centers = new
        labels, dmin = _nearest(x, centers)
        history.append(float(dmin.sum()))
        if np.max(move / scale) < tol:
            break
    return KMeansResult(centers, labels, history, it)


def kmeans_fit(pixels: np.ndarray, k: int, seed: int, max_iter: int = 100, tol: float = 1e-4) -> np.ndarray:
    """K-means++ seeded Lloyd's algorithm; centres returned in lexicographic order."""
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if not np.all(np.isfinite(x)):
        raise DataError("k-means input contains non-finite values")
    if k < 1 or k > len(x):
        raise DataError(f"need 1 <= k <= N, got k={k}, N={len(x)}")
    rng = np.random.default_rng(seed)
    res = lloyd(x, kmeans_plusplus(x, k, rng), max_iter, tol)
    order = np.lexsort(res.centers.T[::-1])
    return res.centers[order]


def raster_pixels(raster: Raster) -> tuple[np.ndarray, np.ndarray]:
    """(valid pixel vectors (N, bands), flat indices of those pixels)."""
    vals = raster.as_nan().reshape(raster.band_count, -1).T
    ok = ~np.isnan(vals).any(axis=1)
    return vals[ok].astype(np.float64), np.flatnonzero(ok)


def kmeans_assign(raster: Raster, centers: np.ndarray) -> Raster:
    """Nearest-centre map (ties to the lowest index); invalid pixels stay NaN."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[1] != raster.band_count:
        raise DataError(f"centres have dimension {centers.shape[-1]}, raster has {raster.band_count} bands")
    x, idx = raster_pixels(raster)
    out = np.full(raster.grid.width * raster.grid.height, np.nan, dtype=np.float32)
    labels, _ = _nearest(x, centers)
    out[idx] = labels
    return Raster(raster.grid, (Band("cluster", float("nan")),), out.reshape(1, *raster.grid.shape))


# --------------------------------------------------------------------------
# Weak labels
# --------------------------------------------------------------------------

def remap_clusters(cluster_map: Raster, reference: Raster, overrides: Optional[Mapping[int, int]] = None,
                   reference_classes: Optional[Mapping[int, int]] = None,
                   n_clusters: Optional[int] = None) -> tuple[Raster, dict[int, int]]:
    """Assign each cluster the majority reference class over its pixels.

    ``reference_classes`` maps raw reference codes onto the four-class scheme
    (ids into ``FOUR_CLASSES``); unmapped codes are ignored.  Without it the
    reference must already use those ids.  ``overrides`` (cluster -> class)
    win over the majority.  Majority ties go to the lowest class id.
    Returns the 4-class raster and the cluster -> class table used.
    """
    check_same_grid(cluster_map, reference)
    overrides = dict(overrides or {})
    cl = cluster_map.as_nan()[0].ravel()
    ref = reference.as_nan()[0].ravel()
    ok = ~np.isnan(cl) & ~np.isnan(ref)
    cl_ok = cl[ok].astype(np.int64)
    ref_ok = ref[ok]
    if reference_classes is None:
        mapped = np.where((ref_ok >= 0) & (ref_ok < len(FOUR_CLASSES)) & (ref_ok == np.round(ref_ok)), ref_ok, -1)
    else:
        mapped = np.full(ref_ok.shape, -1.0)
        for code, cls in reference_classes.items():
            mapped[ref_ok == code] = cls
    mapped = mapped.astype(np.int64)
    use = mapped >= 0
    present = np.unique(cl[~np.isnan(cl)]).astype(np.int64)
    clusters = range(n_clusters) if n_clusters is not None else present
    table: dict[int, int] = {}
    for c in clusters:
        c = int(c)
        if c in overrides:
            table[c] = int(overrides[c])
            continue
        counts = np.bincount(mapped[use & (cl_ok == c)], minlength=len(FOUR_CLASSES))
        if counts.sum() == 0:
            raise DataError(f"cluster {c} has no reference pixels and no override")
        table[c] = int(np.argmax(counts))
    out = np.full(cl.shape, np.nan, dtype=np.float32)
    valid_cl = ~np.isnan(cl)
    lut_keys = cl[valid_cl].astype(np.int64)
    missing = set(np.unique(lut_keys).tolist()) - set(table)
    if missing:
        raise DataError(f"clusters {sorted(missing)} have no class assignment")
    lut = np.zeros(max(table) + 1, dtype=np.float32)
    for c, v in table.items():
        lut[c] = v
    out[valid_cl] = lut[lut_keys]
    return Raster(cluster_map.grid, (Band("class4", float("nan")),), out.reshape(1, *cluster_map.grid.shape)), table


def merge_rice(class_map: Raster, rice_mask: Raster) -> Raster:
    """Shift 4-class ids into the 5-class scheme and burn rice (id 0) where the mask is set."""
    check_same_grid(class_map, rice_mask)
    vals = class_map.as_nan()[0]
    out = np.where(np.isnan(vals), np.nan, vals + 1).astype(np.float32)
    mask = rice_mask.as_nan()[0]
    rice = ~np.isnan(mask) & (mask != 0)
    out[rice] = RICE
    return Raster(class_map.grid, (Band("label", float("nan")),), out[None])


def read_overrides(path: str | os.PathLike) -> dict[int, int]:
    """Two-column text file ``cluster_id class_name`` (class names from the 4-class scheme)."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'cluster_id class_name'")
            try:
                table[int(parts[0])] = class_id(parts[1], FOUR_CLASSES)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return table


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------

@dataclass
class LabeledPointSet:
    x: np.ndarray
    y: np.ndarray
    class_id: np.ndarray
    source: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.class_id = np.asarray(self.class_id, dtype=np.int64)
        if not self.source:
            self.source = ["sample"] * len(self.x)
        if not (len(self.x) == len(self.y) == len(self.class_id) == len(self.source)):
            raise DataError("point set fields have different lengths")
        if len(self.class_id) and (self.class_id.min() < 0 or self.class_id.max() >= len(CLASSES)):
            raise DataError("class id outside the 5-class scheme")

    def __len__(self) -> int:
        return len(self.x)

    def counts(self) -> np.ndarray:
        return np.bincount(self.class_id, minlength=len(CLASSES))

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["point_id", "x", "y", "class_id", "class_name", "source"])
            for i in range(len(self)):
                c = int(self.class_id[i])
                w.writerow([i, repr(float(self.x[i])), repr(float(self.y[i])), c, CLASSES[c], self.source[i]])

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> "LabeledPointSet":
        xs, ys, cs, src = [], [], [], []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                xs.append(float(row["x"]))
                ys.append(float(row["y"]))
                cs.append(int(row["class_id"]))
                src.append(row.get("source") or "sample")
        return cls(np.array(xs), np.array(ys), np.array(cs, dtype=np.int64), src)


def _counts_vector(counts: Mapping[int, int] | Sequence[int]) -> list[int]:
    if isinstance(counts, Mapping):
        vec = [0] * len(CLASSES)
        for k, v in counts.items():
            vec[class_id(k) if isinstance(k, str) else int(k)] = int(v)
        return vec
    vec = [int(v) for v in counts]
    if len(vec) != len(CLASSES):
        raise DataError(f"need {len(CLASSES)} per-class counts, got {len(vec)}")
    return vec


def stratified_sample(labels: Raster, counts: Mapping[int, int] | Sequence[int],
                      region: Optional[PolygonSet], seed: int) -> LabeledPointSet:
    """Uniform sampling without replacement within each class stratum.

    Only pixels whose centre lies inside ``region`` (when given) are eligible.
    Points are pixel centres, ordered by class then by raster position.
    """
    vec = _counts_vector(counts)
    grid = labels.grid
    lab = labels.as_nan()[0]
    eligible = ~np.isnan(lab)
    if region is not None and len(region):
        inside = rasterize(PolygonSet([type(r)(r.vertices, 1) for r in region]), grid).values[0] == 1
        eligible &= inside
    flat_lab = np.where(eligible, lab, -1).ravel()
    rng = np.random.default_rng(seed)
    picked, cls_out = [], []
    short = []
    for c, n in enumerate(vec):
        pool = np.flatnonzero(flat_lab == c)
        if n > len(pool):
            short.append(f"{CLASSES[c]}: requested {n}, available {len(pool)}")
            continue
        if n == 0:
            continue
        chosen = np.sort(rng.choice(pool, size=n, replace=False))
        picked.append(chosen)
        cls_out.append(np.full(n, c))
    if short:
        raise DataError("insufficient stratum population: " + "; ".join(short))
    flat = np.concatenate(picked) if picked else np.zeros(0, dtype=np.int64)
    cls = np.concatenate(cls_out) if cls_out else np.zeros(0, dtype=np.int64)
    rows, cols = np.divmod(flat, grid.width)
    x, y = grid.pixel_center(cols, rows)
    return LabeledPointSet(x, y, cls)


def sampling_report(points: LabeledPointSet, requested: Sequence[int], dropped: Optional[Sequence[int]] = None) -> dict:
    got = points.counts()
    dropped = list(dropped) if dropped is not None else [0] * len(CLASSES)
    return {
        name: {"requested": int(requested[i]), "obtained": int(got[i]), "dropped": int(dropped[i])}
        for i, name in enumerate(CLASSES)
    }


# --------------------------------------------------------------------------
# Patches and splits
# --------------------------------------------------------------------------

@dataclass(eq=False)
class SampleRecord:
    features: np.ndarray  # (C, S, S) float32
    labels: np.ndarray  # (5, S, S) float32 one-hot
    point_id: int
    split: int = SPLIT_NONE

    @property
    def size(self) -> int:
        return self.features.shape[-1]

    @property
    def center_class(self) -> int:
        c = self.size // 2 if self.size > 1 else 0
        return int(np.argmax(self.labels[:, c, c]))


def one_hot(class_map: np.ndarray, classes: int = len(CLASSES)) -> np.ndarray:
    """(S, S) integer ids -> (classes, S, S) float32."""
    ids = np.asarray(class_map, dtype=np.int64)
    return (np.arange(classes)[:, None, None] == ids[None]).astype(np.float32)


def decode_one_hot(labels: np.ndarray) -> np.ndarray:
    return np.argmax(labels, axis=0)


@dataclass
class PatchReport:
    kept: int = 0
    dropped_edge: list[int] = field(default_factory=lambda: [0] * len(CLASSES))
    dropped_nodata: list[int] = field(default_factory=lambda: [0] * len(CLASSES))

    def dropped(self) -> list[int]:
        return [a + b for a, b in zip(self.dropped_edge, self.dropped_nodata)]

    def to_dict(self) -> dict:
        return {"kept": self.kept, "dropped_edge": self.dropped_edge, "dropped_nodata": self.dropped_nodata}


def extract_patches(features: Raster, labels: Raster, points: LabeledPointSet, size: int,
                    point_ids: Optional[Sequence[int]] = None) -> tuple[list[SampleRecord], PatchReport]:
    """Cut ``size`` x ``size`` feature/label patches centred on each point.

    For ``size`` > 1 the point's pixel sits at index (size // 2, size // 2).
    Patches that would cross the raster edge, or contain invalid features or
    labels, are dropped and tallied in the report.
    """
    if size != 1 and (size < 2 or size % 2):
        raise DataError(f"patch size must be 1 or an even number, got {size}")
    check_same_grid(features, labels)
    grid = features.grid
    feat = features.values
    fvalid = features.valid_mask().all(axis=0)
    lab = labels.as_nan()[0]
    half = size // 2
    cols, rows = grid.colrow(points.x, points.y)
    ids = list(point_ids) if point_ids is not None else list(range(len(points)))
    report = PatchReport()
    records = []
    for i in range(len(points)):
        c = int(points.class_id[i])
        r0, c0 = int(rows[i]) - half, int(cols[i]) - half
        if r0 < 0 or c0 < 0 or r0 + size > grid.height or c0 + size > grid.width:
            report.dropped_edge[c] += 1
            continue
        lab_patch = lab[r0:r0 + size, c0:c0 + size]
        if np.isnan(lab_patch).any() or not fvalid[r0:r0 + size, c0:c0 + size].all():
            report.dropped_nodata[c] += 1
            continue
        records.append(SampleRecord(
            features=feat[:, r0:r0 + size, c0:c0 + size].astype(np.float32, copy=True),
            labels=one_hot(lab_patch.astype(np.int64)),
            point_id=int(ids[i]),
        ))
    report.kept = len(records)
    if any(report.dropped()):
        logger.info("dropped patches: edge=%s nodata=%s", report.dropped_edge, report.dropped_nodata)
    return records, report


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """floor(fraction * n) for val and test; everything left goes to train."""
    f_train, f_val, f_test = fractions
    n_val = int(np.floor(f_val * n + 1e-9))
    n_test = int(np.floor(f_test * n + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split(records: Sequence[SampleRecord], fractions: Sequence[float] = (0.7, 0.2, 0.1),
          seed: int = 0) -> tuple[list[SampleRecord], list[SampleRecord], list[SampleRecord]]:
    """Class-stratified shuffle split; sets ``record.split`` on every record."""
    if not records:
        raise DataError("cannot split an empty record list")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise DataError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    strata = np.array([r.center_class for r in records])
    parts: tuple[list, list, list] = ([], [], [])
    for c in range(len(CLASSES)):
        idx = np.flatnonzero(strata == c)
        if idx.size == 0:
            continue
        idx = idx[rng.permutation(idx.size)]
        n_train, n_val, _ = split_sizes(idx.size, fractions)
        bounds = (0, n_train, n_train + n_val, idx.size)
        for tag in range(3):
            for j in idx[bounds[tag]:bounds[tag + 1]]:
                records[j].split = tag
                parts[tag].append(records[j])
    for part in parts:
        part.sort(key=lambda r: r.point_id)
    return parts
