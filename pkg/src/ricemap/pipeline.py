"""Pipeline stages: each reads its inputs, writes artifacts under the output
directory and records a manifest with content hashes.

Artifact layout (relative to the output directory)::

    features/<stack>.tif, features/index_diagnostics.json
    labels/clusters.tif, labels/class4.tif, labels/labels.tif, labels/labels.png, labels/cluster_table.csv
    samples/points.csv, samples/sampling_report.json, samples/<stack>_<arch>_{train,val,test}.prec
    models/<arch>_<stack>.pwts, models/<arch>_<stack>_history.csv, models/<arch>_<stack>_test.json
    maps/<arch>_<stack>_prob.tif, maps/<arch>_<stack>_rice.tif, maps/<arch>_<stack>_class.png
    maps/<arch>_agreement.tif
    area.csv
    validation/metrics.csv, validation/<arch>_<stack>_probabilities.csv, validation/f1_reproduction.csv
    ablation.csv
    manifest_<stage>.json

``<stack>`` is the variant name, suffixed ``_idx`` when indices are included.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import platform
from importlib import resources
from typing import Callable, Iterable, Optional

import numpy as np

import ricemap
from ricemap import evaluation as ev
from ricemap.config import PipelineConfig
from ricemap.errors import DataError, MissingFileError
from ricemap.features import FeatureSources, IndexDiagnostics, build_feature_stack, scale_reflectance
from ricemap.inference import predict_map
from ricemap.nn.checkpoint import load_weights, save_weights
from ricemap.nn.models import build_model
from ricemap.nn.train import evaluate_records, train, write_history_csv
from ricemap.raster.core import Band, Raster
from ricemap.raster.fixture import read_fixture, write_fixture
from ricemap.raster.geotiff import read_geotiff, write_geotiff
from ricemap.raster.quicklook import class_quicklook
from ricemap.raster.resample import resample
from ricemap.raster.vector import PolygonSet, rasterize, read_polygons
from ricemap.records import read_records, write_records
from ricemap.stratify import (CLASSES, LabeledPointSet, extract_patches, kmeans_assign, kmeans_fit, merge_rice,
                              raster_pixels, read_overrides, remap_clusters, sampling_report, split,
                              stratified_sample)

logger = logging.getLogger(__name__)

STAGES = ("features", "cluster", "sample", "train", "predict", "agree", "area", "validate")
SPLIT_NAMES = ("train", "val", "test")


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------

def read_raster(path: str) -> Raster:
    if not os.path.exists(path):
        raise MissingFileError(f"no such raster: {path}")
    if path.lower().endswith((".tif", ".tiff")):
        return read_geotiff(path)
    return read_fixture(path)


def write_raster(raster: Raster, path: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    if path.lower().endswith((".tif", ".tiff")):
        write_geotiff(raster, path)
    else:
        write_fixture(raster, path)


def sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(obj, path: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def versions() -> dict[str, str]:
    import tifffile

    return {"ricemap": ricemap.__version__, "numpy": np.__version__, "tifffile": tifffile.__version__,
            "python": platform.python_version()}


def stack_name(variant: str, include_indices: bool) -> str:
    return variant + ("_idx" if include_indices else "")


class Stage:
    """Bookkeeping for one stage run: tracked inputs/outputs and the manifest."""

    def __init__(self, name: str, cfg: PipelineConfig):
        self.name = name
        self.cfg = cfg
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.extra: dict = {}

    def out(self, *parts: str) -> str:
        path = os.path.join(self.cfg.output_dir, *parts)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        self.outputs.append(path)
        return path

    def use(self, path: str) -> str:
        if not os.path.exists(path):
            raise MissingFileError(f"missing input {path}")
        self.inputs.append(path)
        return path

    def _rel(self, path: str) -> str:
        return os.path.relpath(path, self.cfg.base_dir).replace(os.sep, "/")

    def finish(self) -> str:
        manifest = {
            "stage": self.name,
            "config": self.cfg.resolved(),
            "seeds": self.cfg.seeds(),
            "versions": versions(),
            "inputs": {self._rel(p): sha256(p) for p in sorted(set(self.inputs))},
            "outputs": {self._rel(p): sha256(p) for p in sorted(set(self.outputs))},
        }
        manifest.update(self.extra)
        path = os.path.join(self.cfg.output_dir, f"manifest_{self.name}.json")
        _write_json(manifest, path)
        return path


def _check_crs(r: Raster, cfg: PipelineConfig, what: str) -> None:
    if r.grid.crs_tag != cfg.crs:
        raise DataError(f"{what}: CRS {r.grid.crs_tag!r} does not match configured {cfg.crs!r}")


def _on_grid(r: Raster, ref: Raster, method: str) -> Raster:
    return r if r.grid.same_as(ref.grid) else resample(r, ref.grid, method)


def _stacks(cfg: PipelineConfig) -> list[str]:
    return [stack_name(v, cfg.include_indices) for v in cfg.variants]


def _models(cfg: PipelineConfig) -> list[tuple[str, str]]:
    return [(a, s) for a in cfg.architectures for s in _stacks(cfg)]


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------

def load_sources(cfg: PipelineConfig, st: Stage) -> FeatureSources:
    months = sorted(set(cfg.pre_months) | set(cfg.growing_months))
    optical = {}
    for m in months:
        path = os.path.join(cfg.paths["monthly_dir"], cfg.monthly_pattern.format(month=m))
        r = read_raster(st.use(path))
        _check_crs(r, cfg, path)
        optical[m] = scale_reflectance(r, cfg.reflectance_scale)
    ref = optical[months[0]]
    sources = FeatureSources(optical=optical)
    for key, attr in (("elevation", "elevation"), ("sar_pre", "sar_pre"), ("sar_grow", "sar_grow")):
        r = read_raster(st.use(cfg.paths[key]))
        _check_crs(r, cfg, cfg.paths[key])
        setattr(sources, attr, _on_grid(r, ref, "bilinear"))
    return sources


def run_features(cfg: PipelineConfig) -> str:
    st = Stage("features", cfg)
    sources = load_sources(cfg, st)
    diag = IndexDiagnostics()
    for v in cfg.variants:
        spec = cfg.feature_spec(v)
        d = diag if v == cfg.variants[0] else None  # indices are identical across variants
        r = build_feature_stack(spec, sources, d)
        write_raster(r, st.out("features", stack_name(v, spec.include_indices) + ".tif"))
    _write_json(diag.to_dict(), st.out("features", "index_diagnostics.json"))
    return st.finish()


def _feature_path(cfg: PipelineConfig, stack: str) -> str:
    return os.path.join(cfg.output_dir, "features", stack + ".tif")


def run_cluster(cfg: PipelineConfig) -> str:
    st = Stage("cluster", cfg)
    feats = read_raster(st.use(_feature_path(cfg, _stacks(cfg)[0])))
    optical = Raster(feats.grid, feats.bands[:8], feats.values[:8])
    x, _ = raster_pixels(optical)
    if len(x) > cfg.cluster_fit_pixels:
        rng = np.random.default_rng(cfg.cluster_seed)
        x = x[np.sort(rng.choice(len(x), cfg.cluster_fit_pixels, replace=False))]
    centers = kmeans_fit(x, cfg.cluster_k, cfg.cluster_seed, cfg.cluster_max_iter, cfg.cluster_tol)
    clusters = kmeans_assign(optical, centers)

    reference = read_raster(st.use(cfg.paths["reference"]))
    _check_crs(reference, cfg, cfg.paths["reference"])
    reference = _on_grid(reference, feats, "nearest")
    overrides = read_overrides(st.use(cfg.paths["cluster_overrides"])) if cfg.paths["cluster_overrides"] else None
    class4, table = remap_clusters(clusters, reference, overrides, cfg.reference_codes, cfg.cluster_k)
    rice_mask = rasterize(read_polygons(st.use(cfg.paths["rice_polygons"])), feats.grid, "rice")
    labels = merge_rice(class4, rice_mask)

    write_raster(clusters, st.out("labels", "clusters.tif"))
    write_raster(class4, st.out("labels", "class4.tif"))
    write_raster(labels, st.out("labels", "labels.tif"))
    class_quicklook(labels, st.out("labels", "labels.png"))
    with open(st.out("labels", "cluster_table.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "class4", "class_name", "override"] + [f"center_{i}" for i in range(centers.shape[1])])
        four = ("cropland", "forest", "built-up", "other")
        for c in sorted(table):
            w.writerow([c, table[c], four[table[c]], int(bool(overrides and c in overrides))]
                       + [f"{v:.6f}" for v in centers[c]])
    counts = np.bincount(labels.as_nan()[0][~np.isnan(labels.as_nan()[0])].astype(np.int64), minlength=5)
    st.extra["label_counts"] = {CLASSES[i]: int(n) for i, n in enumerate(counts)}
    return st.finish()


def _records_path(cfg: PipelineConfig, stack: str, arch: str, part: str) -> str:
    return os.path.join(cfg.output_dir, "samples", f"{stack}_{arch}_{part}.prec")


def run_sample(cfg: PipelineConfig) -> str:
    st = Stage("sample", cfg)
    labels = read_raster(st.use(os.path.join(cfg.output_dir, "labels", "labels.tif")))
    region = read_polygons(st.use(cfg.paths["sampling_region"]))
    points = stratified_sample(labels, cfg.sampling_counts, region, cfg.sampling_seed)
    points.write_csv(st.out("samples", "points.csv"))
    report = {}
    for stack in _stacks(cfg):
        feats = read_raster(st.use(_feature_path(cfg, stack)))
        for arch in cfg.architectures:
            records, prep = extract_patches(feats, labels, points, cfg.patch_size_for(arch))
            if not records:
                raise DataError(f"no usable {arch} patches for {stack}")
            parts = split(records, cfg.split_fractions, cfg.split_seed)
            for name, part in zip(SPLIT_NAMES, parts):
                write_records(part, st.out("samples", f"{stack}_{arch}_{name}.prec"))
            report[f"{stack}_{arch}"] = {
                "strata": sampling_report(points, cfg.sampling_counts, prep.dropped()),
                "patches": prep.to_dict(),
                "split": {n: len(p) for n, p in zip(SPLIT_NAMES, parts)},
            }
    _write_json(report, st.out("samples", "sampling_report.json"))
    return st.finish()


def _model_path(cfg: PipelineConfig, arch: str, stack: str, suffix: str) -> str:
    return os.path.join(cfg.output_dir, "models", f"{arch}_{stack}{suffix}")


def run_train(cfg: PipelineConfig) -> str:
    st = Stage("train", cfg)
    for arch, stack in _models(cfg):
        parts = [read_records(st.use(_records_path(cfg, stack, arch, p))) for p in SPLIT_NAMES]
        if not parts[0]:
            raise DataError(f"empty training split for {arch}_{stack}")
        spec = cfg.model_spec(arch, parts[0][0].features.shape[0])
        model = build_model(spec, seed=cfg.train.seed)
        weights, history = train(model, parts[0], parts[1], cfg.train)
        save_weights(weights, st.out("models", f"{arch}_{stack}.pwts"))
        write_history_csv(history, st.out("models", f"{arch}_{stack}_history.csv"))
        test = evaluate_records(model, parts[2], cfg.train.micro_batch).as_dict() if parts[2] else None
        _write_json({"model": f"{arch}:{stack}", "test": test, "samples": {n: len(p) for n, p in zip(SPLIT_NAMES, parts)}},
                    st.out("models", f"{arch}_{stack}_test.json"))
    return st.finish()


def _map_path(cfg: PipelineConfig, arch: str, stack: str, kind: str) -> str:
    return os.path.join(cfg.output_dir, "maps", f"{arch}_{stack}_{kind}")


def run_predict(cfg: PipelineConfig) -> str:
    st = Stage("predict", cfg)
    for arch, stack in _models(cfg):
        feats = read_raster(st.use(_feature_path(cfg, stack)))
        w = load_weights(st.use(_model_path(cfg, arch, stack, ".pwts")))
        model = build_model(w.spec)
        model.load_parameters(w.params)
        probs = predict_map(model, feats, threads=cfg.threads)
        write_raster(probs, st.out("maps", f"{arch}_{stack}_prob.tif"))
        write_raster(ev.rice_binary(probs), st.out("maps", f"{arch}_{stack}_rice.tif"))
        p = probs.as_nan()
        cls = np.where(np.isnan(p).any(axis=0), np.nan, np.argmax(np.nan_to_num(p, nan=-1.0), axis=0))
        class_quicklook(Raster(probs.grid, (Band("class", float("nan")),), cls.astype(np.float32)[None]),
                        st.out("maps", f"{arch}_{stack}_class.png"))
    return st.finish()


def run_agree(cfg: PipelineConfig) -> str:
    st = Stage("agree", cfg)
    for arch in cfg.architectures:
        maps = [read_raster(st.use(_map_path(cfg, arch, s, "rice.tif"))) for s in _stacks(cfg)]
        write_raster(ev.agreement(maps), st.out("maps", f"{arch}_agreement.tif"))
    return st.finish()


def run_area(cfg: PipelineConfig) -> str:
    st = Stage("area", cfg)
    rows = []
    for arch, stack in _models(cfg):
        b = read_raster(st.use(_map_path(cfg, arch, stack, "rice.tif")))
        acres = ev.area_acres(b)
        pixels = int(np.count_nonzero(b.as_nan()[0] == 1.0))
        rows.append([f"{arch}:{stack}", pixels, f"{acres:.4f}", f"{cfg.survey_acres:.4f}",
                     f"{ev.compare_to_survey(acres, cfg.survey_acres):.4f}"])
    with open(st.out("area.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "rice_pixels", "acres", "survey_acres", "percent_difference"])
        w.writerows(rows)
    return st.finish()


def builtin_metric_table() -> str:
    return str(resources.files("ricemap").joinpath("data", "reference_metrics.csv"))


def run_validate(cfg: PipelineConfig) -> str:
    st = Stage("validate", cfg)
    table = cfg.paths["metric_table"]
    if table:
        results = ev.reproduce_f1(ev.read_metric_rows(st.use(table)))
        ev.write_f1_reproduction(results, st.out("validation", "f1_reproduction.csv"))
        st.extra["f1_reproduction"] = {"rows": len(results), "matching": sum(r["match"] for r in results)}
    plots = ev.load_ceo_csv(st.use(cfg.paths["ceo_csv"]))
    excl_path = cfg.paths["exclusion_region"] or cfg.paths["sampling_region"]
    kept, removed = ev.exclude_region(plots, read_polygons(st.use(excl_path)))
    rows = []
    for arch, stack in _models(cfg):
        binary = read_raster(st.use(_map_path(cfg, arch, stack, "rice.tif")))
        probs = read_raster(st.use(_map_path(cfg, arch, stack, "prob.tif")))
        res = ev.validate(kept, binary, probs)
        res.write_export(st.out("validation", f"{arch}_{stack}_probabilities.csv"))
        c = res.counts
        rows.append([f"{arch}:{stack}", c.tp, c.fp, c.tn, c.fn, f"{c.accuracy:.4f}", f"{c.precision:.4f}",
                     f"{c.recall:.4f}", f"{c.f1:.4f}", res.excluded_mixed, removed, res.evaluated])
    with open(st.out("validation", "metrics.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "tp", "fp", "tn", "fn", "accuracy", "precision", "recall", "f1",
                    "excluded_mixed", "excluded_region", "evaluated"])
        w.writerows(rows)
    st.extra["plots"] = {"loaded": len(plots), "excluded_region": removed, "retained": len(kept)}
    return st.finish()


STAGE_FUNCS: dict[str, Callable[[PipelineConfig], str]] = {
    "features": run_features,
    "cluster": run_cluster,
    "sample": run_sample,
    "train": run_train,
    "predict": run_predict,
    "agree": run_agree,
    "area": run_area,
    "validate": run_validate,
}


# --------------------------------------------------------------------------
# Indices ablation
# --------------------------------------------------------------------------

ABLATION_COLUMNS = ("model", "indices", "loss", "categorical_accuracy", "precision", "recall", "f1")


def run_ablation(cfg: PipelineConfig, on_epoch: Optional[Callable] = None) -> str:
    """Train each configured architecture on the first variant with and without indices.

    Both runs share the sample points, split seed and training seed; the
    test-split metrics land in ``ablation.csv``.
    """
    st = Stage("ablation", cfg)
    sources = load_sources(cfg, st)
    labels = read_raster(st.use(os.path.join(cfg.output_dir, "labels", "labels.tif")))
    region = read_polygons(st.use(cfg.paths["sampling_region"]))
    points = stratified_sample(labels, cfg.sampling_counts, region, cfg.sampling_seed)
    variant = cfg.variants[0]
    rows = []
    for arch in cfg.architectures:
        for with_idx in (True, False):
            feats = build_feature_stack(cfg.feature_spec(variant, with_idx), sources)
            records, _ = extract_patches(feats, labels, points, cfg.patch_size_for(arch))
            tr, va, te = split(records, cfg.split_fractions, cfg.split_seed)
            model = build_model(cfg.model_spec(arch, feats.band_count), seed=cfg.train.seed)
            train(model, tr, va, cfg.train, on_epoch=on_epoch)
            m = evaluate_records(model, te, cfg.train.micro_batch)
            rows.append([f"{arch}:{variant}", "with" if with_idx else "without", f"{m.loss:.4f}",
                         f"{m.accuracy:.4f}", f"{m.precision:.4f}", f"{m.recall:.4f}", f"{m.f1:.4f}"])
    with open(st.out("ablation.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        w.writerows(rows)
    return st.finish()


def run_stages(cfg: PipelineConfig, stages: Iterable[str], log: Callable[[str], None] = logger.info) -> list[str]:
    out = []
    for name in stages:
        log(f"stage {name}")
        try:
            out.append(STAGE_FUNCS[name](cfg))
        except Exception as exc:
            exc.stage = name  # type: ignore[attr-defined]
            raise
    return out
