"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -s`` to see the lines inline; they are
also repeated in the terminal summary. Criterion 5 trains both networks on the
full 512x1024 synthetic scene and takes several minutes.
"""

import contextlib
import hashlib
import math
import os
import time

import numpy as np
import pytest

import gradcheck as gc
from conftest import make_grid, make_raster
from test_features import oracle
from ricemap import pipeline
from ricemap import synthetic as syn
from ricemap.config import load_config
from ricemap.demo import write_demo
from ricemap.evaluation import (ValidationPlot, agreement, area_acres, compare_to_survey, exclude_region,
                                read_metric_rows, reproduce_f1, validate)
from ricemap.features import INDICES, FeatureSources, FeatureStackSpec, build_feature_stack, index_values
from ricemap.inference import predict_map
from ricemap.nn import ModelSpec, ModelWeights, TrainConfig, build_model, evaluate_records, train
from ricemap.nn.checkpoint import decode_weights, encode_weights
from ricemap.raster.core import Band, GeoGrid, Raster
from ricemap.raster.fixture import decode_fixture, encode_fixture
from ricemap.raster.vector import PolygonSet, Ring
from ricemap.records import decode_records, encode_records
from ricemap.stratify import CLASSES, SampleRecord, extract_patches, one_hot, split, stratified_sample

RESULTS: dict[int, str] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record and print a PASS/FAIL line for the enclosed checks."""
    info: dict = {}
    t0 = time.perf_counter()
    try:
        yield info
    except BaseException as exc:
        line = f"criterion {number:2d} FAIL  {title}: {str(exc).splitlines()[0] if str(exc) else type(exc).__name__}"
        RESULTS[number] = line
        print(line, flush=True)
        raise
    detail = ", ".join(f"{k}={v}" for k, v in info.items())
    line = f"criterion {number:2d} PASS  {title} [{time.perf_counter() - t0:.1f}s{', ' + detail if detail else ''}]"
    RESULTS[number] = line
    print(line, flush=True)


def elapsed_below(t0: float, limit: float) -> float:
    dt = time.perf_counter() - t0
    assert dt < limit, f"runtime {dt:.1f}s exceeds {limit}s"
    return round(dt, 2)


# --------------------------------------------------------------------------


def test_01_f1_reproduction():
    with criterion(1, "published F1 reproduced from precision/recall within 0.00005") as info:
        t0 = time.perf_counter()
        rows = read_metric_rows(pipeline.builtin_metric_table())
        results = reproduce_f1(rows)
        info["rows"] = len(results)
        elapsed_below(t0, 1.0)
        bad = [f"{r['table']}:{r['model']} reported {r['f1_reported']:.4f} computed {r['f1_computed']:.6f}"
               for r in results if not r["match"]]
        assert not bad, f"{len(bad)} of {len(results)} rows differ: " + "; ".join(bad)


def test_02_index_oracle():
    with criterion(2, "indices match scalar oracle at the canonical pixel; symmetric zeros exact") as info:
        t0 = time.perf_counter()
        R, G, B, N = 0.25, 0.20, 0.05, 0.50
        arr = [np.array([v]) for v in (R, G, B, N)]
        for kind in INDICES:
            got = float(index_values(kind, *arr)[0])
            assert abs(got - oracle(kind, R, G, B, N)) <= 1e-6, kind
        for v in (0.1, 0.3, 0.77):
            a = np.array([v])
            for kind in ("NDVI", "EVI", "SAVI", "MSAVI"):
                assert index_values(kind, a, np.array([0.2]), np.array([0.05]), a)[0] == 0.0, kind  # N == R
            assert index_values("NDWI", np.array([0.2]), a, np.array([0.05]), a)[0] == 0.0  # G == N
            assert index_values("VARI", a, a, np.array([0.05]), np.array([0.5]))[0] == 0.0  # G == R
            assert index_values("TGI", a, a, a, np.array([0.5]))[0] == 0.0  # R == G == B
        info["indices"] = len(INDICES)
        elapsed_below(t0, 1.0)


def test_03_gradients():
    with criterion(3, "finite-difference gradient checks on every layer, rel. error < 1e-4") as info:
        t0 = time.perf_counter()
        worst = {}
        for name, check in gc.CHECKS.items():
            rng = np.random.default_rng(sum(map(ord, name)))
            worst[name] = max(check(rng) for _ in range(5))
        failing = {k: v for k, v in worst.items() if not v < 1e-4}
        assert not failing, failing
        info["layers"] = len(worst)
        info["max_rel_error"] = f"{max(worst.values()):.1e}"
        elapsed_below(t0, 60.0)


def test_04_shapes_and_pixelwise_dnn():
    with criterion(4, "U-Net 256x256 output normalised; DNN tile == per-pixel exactly") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(4)
        unet = build_model(ModelSpec("unet", 8), seed=0)
        x = rng.random((1, 8, 256, 256)).astype(np.float32)
        p = unet.predict(x)
        assert p.shape == (1, 5, 256, 256)
        assert np.abs(p.astype(np.float64).sum(axis=1) - 1.0).max() <= 1e-6

        # 1100 pixels, so the tile spans more than one fixed-width inference block.
        dnn = build_model(ModelSpec("dnn", 8), seed=1)
        feats = make_raster(rng.random((8, 20, 55)), grid=make_grid(55, 20))
        tile = predict_map(dnn, feats).values
        rows, cols = np.meshgrid(np.arange(20), np.arange(55), indexing="ij")
        for r, c in zip(rows.ravel(), cols.ravel()):
            px = dnn.predict(feats.values[:, r:r + 1, c:c + 1][None])[0, :, 0, 0]
            assert np.array_equal(tile[:, r, c], px), (r, c)
        info["pixels_compared"] = rows.size
        elapsed_below(t0, 10.0)


# Synthetic end-to-end settings. 64-pixel patches stand in for 256 so the
# U-Net trains in minutes on one core; both models see the same sample points.
E2E = dict(points_per_class=400, patch_size=64, base_filters=8, epochs=15, batch_size=32, learning_rate=1e-3)


@pytest.mark.slow
def test_05_synthetic_end_to_end():
    with criterion(5, "synthetic scene: U-Net F1 >= 0.85, DNN F1 >= 0.70, U-Net > DNN") as info:
        t0 = time.perf_counter()
        scene = syn.make_scene(seed=0)
        assert scene.label_array.shape == (512, 1024)
        stack = build_feature_stack(FeatureStackSpec("RGBN"),
                                    FeatureSources(pre_optical=scene.pre, grow_optical=scene.grow))
        points = stratified_sample(scene.labels, [E2E["points_per_class"]] * 5, scene.sampling_region, seed=1)
        patches, _ = extract_patches(stack, scene.labels, points, E2E["patch_size"])
        pixels, _ = extract_patches(stack, scene.labels, points, 1)
        u_tr, u_va, u_te = split(patches, (0.7, 0.2, 0.1), seed=2)
        d_tr, d_va, d_te = split(pixels, (0.7, 0.2, 0.1), seed=2)
        assert [r.point_id for r in u_te] == [r.point_id for r in d_te]

        cfg = dict(epochs=E2E["epochs"], batch_size=E2E["batch_size"], learning_rate=E2E["learning_rate"])
        dnn = build_model(ModelSpec("dnn", 8), seed=7)
        train(dnn, d_tr, d_va, TrainConfig(seed=8, micro_batch=32, **cfg))
        unet = build_model(ModelSpec("unet", 8, base_filters=E2E["base_filters"]), seed=3)
        train(unet, u_tr, u_va, TrainConfig(seed=4, **cfg))

        f1_dnn = evaluate_records(dnn, d_te).f1
        f1_unet = evaluate_records(unet, u_te).f1
        f1_dnn_patches = evaluate_records(dnn, u_te).f1
        info.update(unet_f1=f"{f1_unet:.4f}", dnn_f1=f"{f1_dnn:.4f}", dnn_f1_on_unet_patches=f"{f1_dnn_patches:.4f}")
        assert f1_unet >= 0.85, info
        assert f1_dnn >= 0.70, info
        assert f1_unet > f1_dnn, info
        assert f1_unet > f1_dnn_patches, info
        info["runtime_s"] = elapsed_below(t0, 15 * 60.0)


def test_06_sampling_accounting():
    with criterion(6, "stratified sample returns exactly 12157 points with exact strata") as info:
        counts = {"cropland": 1030, "rice": 4332, "forest": 2230, "built-up": 2682, "other": 1883}
        rng = np.random.default_rng(6)
        labels = make_raster(rng.integers(0, 5, (300, 300)).astype(float), grid=make_grid(300, 300))
        pts = stratified_sample(labels, counts, None, seed=11)
        assert len(pts) == 12157
        assert list(pts.counts()) == [counts[c] for c in CLASSES]
        cols, rows = labels.grid.colrow(pts.x, pts.y)
        looked_up = labels.values[0, np.asarray(rows, int), np.asarray(cols, int)]
        assert np.array_equal(looked_up, pts.class_id)
        info["points"] = len(pts)


def _brute_force(truth, pred):
    tp = sum(1 for t, p in zip(truth, pred) if t and p)
    fp = sum(1 for t, p in zip(truth, pred) if not t and p)
    tn = sum(1 for t, p in zip(truth, pred) if not t and not p)
    fn = sum(1 for t, p in zip(truth, pred) if t and not p)
    return tp, fp, tn, fn


def test_07_validation_protocol():
    with criterion(7, "1667 plots minus 359 excluded leaves 1308; validation algebra exact") as info:
        rng = np.random.default_rng(7)
        inside = np.arange(1667) < 359
        xs = rng.uniform(0, 100, 1667)
        ys = np.where(inside, rng.uniform(0, 49, 1667), rng.uniform(51, 100, 1667))
        plots = [ValidationPlot(str(i), x, y, "rice") for i, (x, y) in enumerate(zip(xs, ys))]
        kept, removed = exclude_region(plots, PolygonSet([Ring.rectangle(-1, -1, 101, 50)]))
        assert (len(kept), removed) == (1308, 359)

        for _ in range(100):
            n = int(rng.integers(1, 80))
            truth, pred = rng.integers(0, 2, n), rng.integers(0, 2, n)
            grid = GeoGrid(0.0, 10.0, 10.0, 10.0, n, 1, "EPSG:32645")
            binary = Raster(grid, (Band("rice", 255.0),), pred.astype(np.float32)[None, None])
            xs, ys = grid.pixel_center(np.arange(n), np.zeros(n, int))
            plots = [ValidationPlot(str(i), float(x), float(y), "rice" if t else "non-rice")
                     for i, (x, y, t) in enumerate(zip(xs, ys, truth))]
            c = validate(plots, binary).counts
            tp, fp, tn, fn = _brute_force(truth, pred)
            assert (c.tp, c.fp, c.tn, c.fn) == (tp, fp, tn, fn)
            assert c.accuracy == (tp + tn) / n
            assert c.precision == (tp / (tp + fp) if tp + fp else 0.0)
            assert c.recall == (tp / (tp + fn) if tp + fn else 0.0)
            p, r = c.precision, c.recall
            assert c.f1 == (2 * p * r / (p + r) if p + r else 0.0)
        info["retained"] = len(kept)


def test_08_area_arithmetic():
    with criterion(8, "1000 pixels = 24.7105 acres; +9.27% vs survey; agreement of 4 identical maps is 4") as info:
        v = np.zeros((40, 50), np.float32)
        v.ravel()[:1000] = 1.0
        binary = Raster(make_grid(50, 40), (Band("rice", 255.0),), v[None])
        acres = area_acres(binary)
        assert abs(acres - 24.7105) <= 1e-4, acres
        pct = compare_to_survey(2258.54, 2066.9)
        assert abs(pct - 9.27) <= 0.005, pct
        # Agreement counts rice votes per pixel, so four identical all-rice maps give 4 everywhere.
        full = Raster(binary.grid, binary.bands, np.ones_like(binary.values))
        assert np.all(agreement([full] * 4).values == 4)
        assert np.array_equal(agreement([binary] * 4).values, 4 * binary.values)
        info.update(acres=f"{acres:.4f}", percent=f"{pct:+.2f}")


def _random_raster(rng):
    b, h, w = (int(v) for v in rng.integers(1, 6, 3))
    grid = GeoGrid(float(rng.normal(0, 1e5)), float(rng.normal(0, 1e6)), float(rng.uniform(0.1, 100)),
                   float(rng.uniform(0.1, 100)), w, h, str(rng.choice(["EPSG:32645", "LOCAL"])))
    vals = rng.integers(0, 2 ** 32, (b, h, w), dtype=np.uint64).astype(np.uint32).view(np.float32)
    bands = tuple(Band(f"b{i}", None if rng.random() < 0.5 else float(rng.normal())) for i in range(b))
    return Raster(grid, bands, vals)


def _random_records(rng):
    c, s = int(rng.integers(1, 5)), int(rng.choice([1, 2, 4]))
    return [SampleRecord(rng.normal(size=(c, s, s)).astype(np.float32), one_hot(rng.integers(0, 5, (s, s))),
                         int(rng.integers(0, 2 ** 62)), int(rng.choice([0, 1, 2, 255])))
            for _ in range(int(rng.integers(1, 6)))]


def _random_weights(rng):
    spec = ModelSpec("dnn", int(rng.integers(1, 6)), hidden=tuple(int(h) for h in rng.integers(1, 8, 3)))
    params = {k: rng.normal(size=v.shape).astype(np.float32)
              for k, v in build_model(spec, seed=0).parameters().items()}
    m = {k: rng.normal(size=v.shape).astype(np.float32) for k, v in params.items()}
    v = {k: rng.random(v.shape).astype(np.float32) for k, v in params.items()}
    return ModelWeights(spec, params, m, v, int(rng.integers(0, 2 ** 40)), int(rng.integers(0, 100)),
                        float(rng.random()))


def _tree_hashes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            path = os.path.join(dirpath, f)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = hashlib.sha256(fh.read()).hexdigest()
    return out


def _run_demo(path):
    cfg_path = write_demo(str(path), seed=5, height=128, width=256, per_class=10, epochs=1, patch_size=32,
                          variants="RGBN,RGBNES", n_plots=300)
    pipeline.run_stages(load_config(cfg_path), pipeline.STAGES)
    return _tree_hashes(os.path.join(path, "output"))


def test_09_serialization_and_determinism(tmp_path):
    with criterion(9, "PSCP/PREC/PWTS round-trip bit-exactly; pipeline artifacts byte-identical") as info:
        rng = np.random.default_rng(9)
        for _ in range(100):
            r = _random_raster(rng)
            assert encode_fixture(decode_fixture(encode_fixture(r))) == encode_fixture(r)
            back = decode_fixture(encode_fixture(r))
            assert back.values.tobytes() == r.values.tobytes() and back.grid == r.grid
        for _ in range(100):
            recs = _random_records(rng)
            back = decode_records(encode_records(recs))
            assert all(a.features.tobytes() == b.features.tobytes() and a.labels.tobytes() == b.labels.tobytes()
                       and (a.point_id, a.split) == (b.point_id, b.split) for a, b in zip(recs, back))
            assert encode_records(back) == encode_records(recs)
        for _ in range(100):
            w = _random_weights(rng)
            back = decode_weights(encode_weights(w))
            assert all(back.params[k].tobytes() == w.params[k].tobytes() for k in w.params)
            assert encode_weights(back) == encode_weights(w)

        first = _run_demo(tmp_path / "a")
        second = _run_demo(tmp_path / "b")
        assert first == second
        info["artifacts"] = len(first)


def test_10_indices_ablation(tmp_path):
    with criterion(10, "indices ablation runs 30 epochs with and without indices and writes the CSV") as info:
        cfg_path = write_demo(str(tmp_path), seed=10, height=128, width=256, per_class=10, patch_size=32,
                              variants="RGBN")
        cfg = load_config(cfg_path, {"train.epochs": "30"})
        assert cfg.train.epochs == 30
        pipeline.run_stages(cfg, ["features", "cluster"])
        epochs_seen = []
        pipeline.run_ablation(cfg, on_epoch=lambda e, *_: epochs_seen.append(e))
        with open(os.path.join(cfg.output_dir, "ablation.csv"), encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        assert lines[0].split(",") == list(pipeline.ABLATION_COLUMNS)
        body = [ln.split(",") for ln in lines[1:]]
        assert [row[:2] for row in body] == [["dnn:RGBN", "with"], ["dnn:RGBN", "without"],
                                             ["unet:RGBN", "with"], ["unet:RGBN", "without"]]
        for row in body:
            assert all(math.isfinite(float(v)) for v in row[2:]), row
        assert epochs_seen == list(range(30)) * 4
        info["runs"] = len(body)
