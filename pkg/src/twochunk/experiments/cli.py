"""Command-line entry point: ``twochunk {run,sweep,flash-crowd,report,list-models}``.

Exit codes: 0 when every asserted check passes, 1 when a check fails or an
engine errors, 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from ..models import ModelKind, build_model
from .config import ConfigError, load_config
from .report import report_all
from .runner import SWEEP_PARAMETERS, ScenarioError, flash_crowd, run_scenario, shipped_scenarios, sweep

ENV_OUT_DIR = "TWOCHUNK_OUT_DIR"
DEFAULT_OUT_DIR = "twochunk-out"


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--out-dir", default=default,
                        help=f"output directory (default: ${ENV_OUT_DIR}, else the config's output_dir, "
                             f"else ./{DEFAULT_OUT_DIR})")
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker processes for CTMC ensembles (default 1)")
    parser.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twochunk", description="Two-chunk swarm experiments.")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run scenario files (or directories of *.yaml)")
    _global_flags(r, suppress=True)
    r.add_argument("configs", nargs="*", type=Path)
    r.add_argument("--suite", action="store_true", help="run every shipped scenario")

    s = sub.add_parser("sweep", help="repeat a scenario over parameter values")
    _global_flags(s, suppress=True)
    s.add_argument("config", type=Path)
    s.add_argument("--param", required=True, choices=SWEEP_PARAMETERS)
    s.add_argument("--values", required=True, help="comma-separated positive values")
    s.add_argument("--scale-initial", action="store_true",
                   help="with --param lambda, multiply the initial state by lambda / base lambda")

    f = sub.add_parser("flash-crowd", help="run a scenario with a piecewise-constant arrival schedule")
    _global_flags(f, suppress=True)
    f.add_argument("config", type=Path)

    rep = sub.add_parser("report", help="consolidate manifests into report.md / report.json")
    _global_flags(rep, suppress=True)
    rep.add_argument("directory", nargs="?", type=Path)

    lm = sub.add_parser("list-models", help="show model kinds, components and transitions")
    _global_flags(lm, suppress=True)
    return p


def resolve_out_dir(flag, config_dir=None) -> Path:
    if flag:
        return Path(flag)
    if config_dir:
        return Path(config_dir)
    return Path(os.environ.get(ENV_OUT_DIR) or DEFAULT_OUT_DIR)


def _config_paths(args) -> list[Path]:
    paths = list(shipped_scenarios()) if args.suite else []
    for c in args.configs:
        paths.extend(sorted(c.glob("*.yaml")) if c.is_dir() else [c])
    if not paths:
        raise ConfigError("run needs at least one config file (or --suite)")
    return paths


def _parse_values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be comma-separated numbers, got {text!r}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list-models":
            for kind in ModelKind:
                m = build_model(kind, 1.0)
                rules = ", ".join(r.label for r in m.transitions)
                print(f"{kind.value:9s} components={','.join(m.labels)}  transitions: {rules}")
            return 0
        if args.command == "report":
            directory = args.directory or resolve_out_dir(args.out_dir)
            doc = report_all(directory)
            for row in doc["rows"]:
                print(f"{row['status']:18s} {row['claim']}")
            for bad in doc["unreadable_manifests"]:
                print(f"unreadable manifest {bad['path']}: {bad['error']}")
            print(f"report written to {directory / 'report.md'}")
            return 0 if doc["ok"] else 1
        if args.command == "run":
            configs = [load_config(p) for p in _config_paths(args)]  # validate everything first
            verdicts = [run_scenario(c, resolve_out_dir(args.out_dir, c.output_dir), args.threads)["verdict"]
                        for c in configs]
            return 1 if "fail" in verdicts else 0
        if args.command == "sweep":
            cfg = load_config(args.config)
            man = sweep(cfg, args.param, _parse_values(args.values), resolve_out_dir(args.out_dir, cfg.output_dir),
                        args.threads, args.scale_initial)
            return 1 if man["verdict"] == "fail" else 0
        if args.command == "flash-crowd":
            cfg = load_config(args.config)
            man = flash_crowd(cfg, resolve_out_dir(args.out_dir, cfg.output_dir), args.threads)
            return 1 if man["verdict"] == "fail" else 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
