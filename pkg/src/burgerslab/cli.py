"""Command line interface: run / list / validate / report."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .exceptions import ConfigurationError
from .harness import (
    EXIT_OK,
    EXIT_VALIDATION,
    ExperimentConfig,
    preset_config,
    preset_list,
    render_report,
    run_experiment,
)


def _load_config(target: str) -> ExperimentConfig:
    if Path(target).is_file():
        return ExperimentConfig.from_file(target)
    return preset_config(target)


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    updates = {}
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.threads is not None:
        updates["threads"] = args.threads
    if args.out is not None:
        updates["out"] = args.out
    if args.paths is not None:
        updates["n_paths"] = args.paths
    if args.nx is not None:
        updates["n_x"] = args.nx
    if args.dump_trajectories:
        updates["dump_trajectories"] = True
    return replace(cfg, **updates) if updates else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="burgerslab",
        description="Monte Carlo laboratory for a stochastic generalized "
                    "Burgers equation with space-time white noise.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a preset or a config file")
    run_p.add_argument("target", help="preset name or path to a config file")
    run_p.add_argument("--seed", type=int, help="override the master seed")
    run_p.add_argument("--threads", type=int, help="worker cap (advisory)")
    run_p.add_argument("--out", help="output directory")
    run_p.add_argument("--paths", type=int, help="override the ensemble size")
    run_p.add_argument("--nx", type=int, help="override the spatial resolution")
    run_p.add_argument("--dump-trajectories", action="store_true",
                       help="also export one example trajectory as CSV")

    sub.add_parser("list", help="list available presets")

    val_p = sub.add_parser("validate", help="validate a config file")
    val_p.add_argument("target", help="preset name or path to a config file")

    rep_p = sub.add_parser("report", help="render JSON artifacts as text")
    rep_p.add_argument("run_dir", help="directory containing run artifacts")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for name in preset_list():
            print(name)
        return EXIT_OK
    if args.command == "validate":
        try:
            cfg = _load_config(args.target)
            cfg.validate()
        except ConfigurationError as exc:
            print(f"validation error: {exc}")
            return EXIT_VALIDATION
        print(f"ok: {cfg.name} (hash {cfg.config_hash()})")
        return EXIT_OK
    if args.command == "report":
        sys.stdout.write(render_report(args.run_dir))
        return EXIT_OK
    # run
    try:
        cfg = _apply_overrides(_load_config(args.target), args)
    except ConfigurationError as exc:
        print(f"validation error: {exc}")
        return EXIT_VALIDATION
    return run_experiment(cfg)


if __name__ == "__main__":
    raise SystemExit(main())
