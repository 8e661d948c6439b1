"""Command-line entry points: run, validate, plot, print-config."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, ProxCoverError
from .harness import (SUITES, ExperimentConfig, default_config_text,
                      load_config, render_plots, run_experiment, run_suite)

EXIT_OK = 0
EXIT_VALIDATION_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="proxcover",
        description="Coverage-control simulator: proximal descent schemes "
                    "driven by optimal transport.")
    sub = p.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run the configured experiment")
    runp.add_argument("--config", type=Path, help="flat key=value config file")
    runp.add_argument("--seed", type=int, help="override the config seed")
    runp.add_argument("--out", type=Path, help="override the output directory")
    runp.add_argument("--threads", type=int, help="parallel runs over swarm sizes")

    valp = sub.add_parser("validate", help="run a cross-module property suite")
    valp.add_argument("suite", choices=sorted(SUITES))
    valp.add_argument("--seed", type=int, default=0)
    valp.add_argument("--out", type=Path, help="write the JSON report here")

    plotp = sub.add_parser("plot", help="render figures for a finished run")
    plotp.add_argument("run_dir", type=Path)

    sub.add_parser("print-config", help="print the default config file")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "print-config":
            sys.stdout.write(default_config_text())
            return EXIT_OK
        if args.command == "run":
            cfg = load_config(args.config) if args.config else ExperimentConfig()
            if args.seed is not None:
                cfg.seed = args.seed
            if args.out is not None:
                cfg.out_dir = str(args.out)
            if args.threads is not None:
                cfg.threads = args.threads
            summary = run_experiment(cfg)
            json.dump(summary, sys.stdout, indent=2, sort_keys=True)
            sys.stdout.write("\n")
            return EXIT_OK
        if args.command == "validate":
            report = run_suite(args.suite, seed=args.seed)
            text = json.dumps(report, indent=2, sort_keys=True) + "\n"
            if args.out:
                Path(args.out).write_text(text, encoding="utf-8")
            sys.stdout.write(text)
            return EXIT_OK if report["passed"] else EXIT_VALIDATION_FAILED
        if args.command == "plot":
            for path in render_plots(args.run_dir):
                print(path)
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProxCoverError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
