"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from ricemap import pipeline
from ricemap.config import load_config
from ricemap.errors import ConfigError, RicemapError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
COMMANDS = pipeline.STAGES + ("all", "ablation")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ricemap", description="Rice extent mapping pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=f"run the {name} stage" if name in pipeline.STAGES else None)
        s.add_argument("config", help="pipeline INI file")
        s.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config key (repeatable)")
        s.add_argument("--seed-cluster", type=int)
        s.add_argument("--seed-sampling", type=int)
        s.add_argument("--seed-split", type=int)
        s.add_argument("--seed-train", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--variant", choices=["rgbn", "rgbne", "rgbns", "rgbnes"], type=str.lower)
        s.add_argument("--arch", choices=["dnn", "unet"], type=str.lower)
        s.add_argument("--with-indices", action="store_true")
        s.add_argument("-v", "--verbose", action="store_true")
    synth = sub.add_parser("synth", help="write a synthetic demo dataset and config")
    synth.add_argument("outdir")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--height", type=int, default=512)
    synth.add_argument("--width", type=int, default=1024)
    return p


def collect_overrides(args: argparse.Namespace) -> dict[str, str]:
    """Flag overrides, applied after ``--set`` so dedicated flags win."""
    out: dict[str, str] = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError([{"field": "--set", "message": f"expected SECTION.KEY=VALUE, got {item!r}"}])
        out[key.strip()] = value.strip()
    for flag, key in (("seed_cluster", "cluster.seed"), ("seed_sampling", "sampling.seed"),
                      ("seed_split", "split.seed"), ("seed_train", "train.seed"), ("threads", "runtime.threads")):
        v = getattr(args, flag)
        if v is not None:
            out[key] = str(v)
    if args.variant:
        out["features.variants"] = args.variant.upper()
    if args.arch:
        out["model.architectures"] = args.arch
    if args.with_indices:
        out["features.include_indices"] = "true"
    return out


def _synth(args: argparse.Namespace) -> int:
    from ricemap.demo import write_demo

    path = write_demo(args.outdir, seed=args.seed, height=args.height, width=args.width)
    print(path)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "synth":
        return _synth(args)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, collect_overrides(args))
    except ConfigError as exc:
        print(json.dumps({"errors": exc.errors}, indent=2), file=sys.stderr)
        return EXIT_CONFIG
    stages = pipeline.STAGES if args.command == "all" else (args.command,)
    stage = args.command
    try:
        # BLAS stays single-threaded so results do not depend on the machine;
        # --threads controls tile-level parallelism instead.
        with threadpool_limits(limits=1):
            if args.command == "ablation":
                pipeline.run_ablation(cfg)
            else:
                for stage in stages:
                    pipeline.run_stages(cfg, [stage])
                    print(f"{stage}: ok")
    except RicemapError as exc:
        print(f"error in stage {stage}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - reported as an internal error
        print(f"internal error in stage {stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
