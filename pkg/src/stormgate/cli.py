"""Command-line entry point: ``stormgate <subcommand> [options]``.

Exit codes: 0 ok, 2 configuration error, 3 missing artifact, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline
from .config import ConfigError, PipelineConfig, read_config
from .model import ConvergenceError
from .synth import SyntheticSpec

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4
STAGE_ORDER = ("ingest", "interp", "features", "train", "predict", "eval", "bootstrap", "report")

log = logging.getLogger("stormgate")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stormgate",
                                 description="Thunderstorm outage early-warning pipeline.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="pipeline INI file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", type=Path, help="artifact directory (default: config directory)")
    common.add_argument("--scope", choices=("all", "available"), help="evaluation hour scope")
    common.add_argument("--threshold", type=float, help="state peak threshold (customers)")

    s = sub.add_parser("synth", parents=[common], help="write the synthetic season and a config")
    s.add_argument("--storms", type=int, help="major storms per season")
    s.add_argument("--counties", type=int, help="number of counties")
    s.add_argument("--stations", type=int, help="number of stations")
    s.add_argument("--hours", type=int, help="hours per season (train and test alike)")
    for name in STAGE_ORDER:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage")
    sub.add_parser("all", parents=[common], help="run every stage after synth in order")
    return ap


def _load(args) -> tuple:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    if not Path(args.config).exists():
        raise ConfigError(f"{args.config}: config file not found")
    cfg = read_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.scope is not None:
        cfg.eval.scope = args.scope
    if args.threshold is not None:
        cfg.targets.peak_threshold = args.threshold
    cfg.validate()
    base = Path(args.config).resolve().parent
    out = Path(args.out) if args.out else base
    out.mkdir(parents=True, exist_ok=True)
    return cfg, base, out


def _synth(args) -> int:
    out = Path(args.out or ".")
    spec = SyntheticSpec()
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.storms is not None:
        kw["storm_count"] = args.storms
    if args.counties is not None:
        kw["n_counties"] = args.counties
    if args.stations is not None:
        kw["n_stations"] = args.stations
    if args.hours is not None:
        kw["train_hours"] = kw["test_hours"] = args.hours
    if args.threshold is not None:
        kw["threshold"] = args.threshold
    spec = replace(spec, **kw)
    cfg = PipelineConfig()
    if args.scope is not None:
        cfg.eval.scope = args.scope
    paths = pipeline.run_synth(out, spec, cfg)
    for k, p in paths.items():
        print(f"{k}: {p}")
    return EXIT_OK


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return _synth(args)
        cfg, base, out = _load(args)
        stages = STAGE_ORDER if args.command == "all" else (args.command,)
        for name in stages:
            t0 = time.perf_counter()
            pipeline.STAGES[name](cfg, base, out)
            print(f"{name}: done in {time.perf_counter() - t0:.1f} s")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
