"""Pipeline configuration: an INI file with sections, overridable from the command line.

Precedence, lowest to highest: built-in defaults, the config file,
``--set section.key=value`` overrides, dedicated flags (``--seed-*``,
``--threads``, ``--variant``, ``--arch``, ``--with-indices``).

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from typing import Optional

from ricemap.errors import ConfigError
from ricemap.features import VARIANTS, FeatureStackSpec
from ricemap.nn.models import ModelSpec
from ricemap.nn.train import TrainConfig
from ricemap.stratify import CLASSES, class_id

DEFAULTS: dict[str, dict[str, str]] = {
    "paths": {
        "monthly_pattern": "month_{month:02d}.tif",
        "cluster_overrides": "",
        "exclusion_region": "",
        "metric_table": "",
        "output": "output",
    },
    "grid": {},
    "features": {
        "variants": "RGBN,RGBNE,RGBNS,RGBNES",
        "include_indices": "false",
        "pre_months": "3,4,5",
        "growing_months": "6,7,8,9",
        "reflectance_scale": "0.0001",
    },
    "cluster": {
        "k": "7",
        "seed": "0",
        "max_iter": "100",
        "tol": "0.0001",
        "fit_pixels": "200000",
        "reference_codes": "10:cropland,20:forest,30:built-up,40:other",
    },
    "sampling": {
        "rice": "4332",
        "cropland": "1030",
        "forest": "2230",
        "built-up": "2682",
        "other": "1883",
        "seed": "0",
    },
    "split": {"train": "0.7", "val": "0.2", "test": "0.1", "seed": "0"},
    "model": {
        "architectures": "dnn,unet",
        "dnn_hidden": "256,128,64",
        "dropout": "0.2",
        "base_filters": "32",
        "patch_size": "256",
    },
    "train": {
        "epochs": "30",
        "batch_size": "32",
        "learning_rate": "0.001",
        "beta1": "0.9",
        "beta2": "0.999",
        "epsilon": "1e-7",
        "augment_prob": "0.8",
        "seed": "0",
        "micro_batch": "4",
    },
    "evaluation": {"survey_acres": "2066.9"},
    "runtime": {"threads": "1"},
}

REQUIRED_PATHS = ("monthly_dir", "elevation", "sar_pre", "sar_grow", "reference", "rice_polygons",
                  "sampling_region", "ceo_csv")
OPTIONAL_PATHS = ("cluster_overrides", "exclusion_region", "metric_table")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace(" ", "").split(",") if v)


def _words(s: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in s.split(",") if v.strip())


@dataclass
class PipelineConfig:
    base_dir: str
    paths: dict[str, str]
    crs: str
    monthly_pattern: str
    variants: tuple[str, ...]
    include_indices: bool
    pre_months: tuple[int, ...]
    growing_months: tuple[int, ...]
    reflectance_scale: float
    cluster_k: int
    cluster_seed: int
    cluster_max_iter: int
    cluster_tol: float
    cluster_fit_pixels: int
    reference_codes: dict[int, int]  # reference code -> 4-class index
    sampling_counts: tuple[int, ...]
    sampling_seed: int
    split_fractions: tuple[float, float, float]
    split_seed: int
    architectures: tuple[str, ...]
    dnn_hidden: tuple[int, ...]
    dropout: float
    base_filters: int
    patch_size: int
    train: TrainConfig
    survey_acres: float
    threads: int
    raw: dict[str, dict[str, str]] = field(default_factory=dict)

    @property
    def output_dir(self) -> str:
        return self.paths["output"]

    def feature_spec(self, variant: str, include_indices: Optional[bool] = None) -> FeatureStackSpec:
        inc = self.include_indices if include_indices is None else include_indices
        return FeatureStackSpec(variant, inc, self.pre_months, self.growing_months)

    def model_spec(self, arch: str, channels: int) -> ModelSpec:
        return ModelSpec(arch, channels, hidden=self.dnn_hidden, dropout=self.dropout,
                         base_filters=self.base_filters)

    def patch_size_for(self, arch: str) -> int:
        return 1 if arch == "dnn" else self.patch_size

    def seeds(self) -> dict[str, int]:
        return {"cluster": self.cluster_seed, "sampling": self.sampling_seed, "split": self.split_seed,
                "train": self.train.seed}

    def resolved(self) -> dict[str, dict[str, str]]:
        """The merged key/value view, for manifests."""
        return {s: dict(sorted(v.items())) for s, v in sorted(self.raw.items())}


def _merge(parser: configparser.ConfigParser, overrides: dict[str, str]) -> dict[str, dict[str, str]]:
    merged = {s: dict(v) for s, v in DEFAULTS.items()}
    for s in parser.sections():
        merged.setdefault(s, {}).update({k: v for k, v in parser.items(s)})
    for key, value in overrides.items():
        section, _, name = key.partition(".")
        merged.setdefault(section, {})[name] = value
    return merged


def load_config(path: str | os.PathLike, overrides: Optional[dict[str, str]] = None,
                check_paths: bool = True) -> PipelineConfig:
    """Parse and validate; every problem is collected into one :class:`ConfigError`."""
    errors: list[dict] = []

    def err(fld: str, msg: str) -> None:
        errors.append({"field": fld, "message": msg})

    if not os.path.exists(path):
        raise ConfigError([{"field": "config", "message": f"config file not found: {path}"}])
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError([{"field": "config", "message": str(exc)}]) from None
    raw = _merge(parser, dict(overrides or {}))
    for bad in sorted(set(raw) - set(DEFAULTS)):
        err(bad, "unknown section")
    base = os.path.dirname(os.path.abspath(path))

    def get(section: str, key: str, conv, check=None, what: str = ""):
        fld = f"{section}.{key}"
        if key not in raw.get(section, {}):
            err(fld, "missing required key")
            return None
        try:
            value = conv(raw[section][key])
        except (ValueError, TypeError) as exc:
            err(fld, f"cannot parse {raw[section][key]!r}: {exc}")
            return None
        if check is not None and not check(value):
            err(fld, f"invalid value {raw[section][key]!r}: {what}")
            return None
        return value

    def boolean(s: str) -> bool:
        v = s.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean")

    paths: dict[str, str] = {}
    sec = raw.get("paths", {})
    for key in REQUIRED_PATHS:
        if not sec.get(key, "").strip():
            err(f"paths.{key}", "missing required path")
            continue
        paths[key] = os.path.normpath(os.path.join(base, sec[key].strip()))
    for key in OPTIONAL_PATHS:
        val = sec.get(key, "").strip()
        paths[key] = os.path.normpath(os.path.join(base, val)) if val else ""
    paths["output"] = os.path.normpath(os.path.join(base, sec.get("output", "output").strip() or "output"))
    if check_paths:
        for key, p in paths.items():
            if key == "output" or not p:
                continue
            if key == "monthly_dir":
                if not os.path.isdir(p):
                    err(f"paths.{key}", f"directory not found: {p}")
            elif not os.path.isfile(p):
                err(f"paths.{key}", f"file not found: {p}")

    crs = raw.get("grid", {}).get("crs", "").strip()
    if not crs:
        err("grid.crs", "missing required key")

    variants = get("features", "variants", lambda s: tuple(v.upper() for v in _words(s)),
                   lambda v: v and all(x in VARIANTS for x in v), f"each of {VARIANTS}")
    include_indices = get("features", "include_indices", boolean)
    pre_months = get("features", "pre_months", _ints, lambda v: all(1 <= m <= 12 for m in v), "months 1-12")
    growing = get("features", "growing_months", _ints, lambda v: v and all(1 <= m <= 12 for m in v),
                  "non-empty, months 1-12")
    scale = get("features", "reflectance_scale", float, lambda v: v > 0, "must be positive")

    k = get("cluster", "k", int, lambda v: v >= 1, "must be >= 1")
    cseed = get("cluster", "seed", int)
    max_iter = get("cluster", "max_iter", int, lambda v: v >= 1, "must be >= 1")
    tol = get("cluster", "tol", float, lambda v: v >= 0, "must be >= 0")
    fit_pixels = get("cluster", "fit_pixels", int, lambda v: v >= 1, "must be >= 1")

    def codes(s: str) -> dict[int, int]:
        out = {}
        for item in _words(s):
            code, _, name = item.partition(":")
            out[int(code)] = class_id(name, ("cropland", "forest", "built-up", "other"))
        return out

    ref_codes = get("cluster", "reference_codes", codes, lambda v: len(v) > 0, "needs at least one code")

    counts = []
    for c in CLASSES:
        counts.append(get("sampling", c, int, lambda v: v >= 0, "must be >= 0"))
    sseed = get("sampling", "seed", int)

    fr = [get("split", s, float, lambda v: 0 <= v <= 1, "must be in [0, 1]") for s in ("train", "val", "test")]
    if None not in fr and abs(sum(fr) - 1.0) > 1e-9:
        err("split", f"fractions must sum to 1, got {sum(fr)}")
    split_seed = get("split", "seed", int)

    archs = get("model", "architectures", lambda s: tuple(a.lower() for a in _words(s)),
                lambda v: v and all(a in ("dnn", "unet") for a in v), "each of dnn, unet")
    hidden = get("model", "dnn_hidden", _ints, lambda v: len(v) == 3 and min(v) > 0, "three positive widths")
    dropout = get("model", "dropout", float, lambda v: 0 <= v < 1, "must be in [0, 1)")
    base_filters = get("model", "base_filters", int, lambda v: v > 0, "must be positive")
    patch = get("model", "patch_size", int, lambda v: v > 0 and v % 16 == 0, "positive multiple of 16")

    tc = {}
    for key, conv in (("epochs", int), ("batch_size", int), ("learning_rate", float), ("beta1", float),
                      ("beta2", float), ("epsilon", float), ("augment_prob", float), ("seed", int),
                      ("micro_batch", int)):
        tc[key] = get("train", key, conv)
    train_cfg = None
    if None not in tc.values():
        try:
            train_cfg = TrainConfig(**tc)
        except ValueError as exc:
            err("train", str(exc))

    survey = get("evaluation", "survey_acres", float, lambda v: v > 0, "must be positive")
    threads = get("runtime", "threads", int, lambda v: v >= 1, "must be >= 1")

    if errors:
        raise ConfigError(errors)
    return PipelineConfig(
        base_dir=base, paths=paths, crs=crs, monthly_pattern=raw["paths"]["monthly_pattern"],
        variants=variants, include_indices=include_indices, pre_months=pre_months, growing_months=growing,
        reflectance_scale=scale, cluster_k=k, cluster_seed=cseed, cluster_max_iter=max_iter, cluster_tol=tol,
        cluster_fit_pixels=fit_pixels, reference_codes=ref_codes, sampling_counts=tuple(counts),
        sampling_seed=sseed, split_fractions=tuple(fr), split_seed=split_seed, architectures=archs,
        dnn_hidden=hidden, dropout=dropout, base_filters=base_filters, patch_size=patch, train=train_cfg,
        survey_acres=survey, threads=threads, raw=raw,
    )
