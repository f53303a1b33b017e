"""Command-line front end for the benchmark harness.

Subcommands: table1 (Table-1-style matrices), figure2 (sinusoid sweeps),
verify (certificate report), synth (one-shot synthesis dump), rpi
(terminal-set dump).  Flags override config-file values; the REGRETH_LOG
environment variable sets the logging level.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace

from .bench import (ConfigError, ExperimentConfig, cmd_figure2, cmd_rpi,
                    cmd_synth, cmd_table1, cmd_verify)

COMMANDS = {
    "table1": (cmd_table1, "run the benchmark matrix and write CSV pivots"),
    "figure2": (cmd_figure2, "sweep sinusoid phase and frequency"),
    "verify": (cmd_verify, "print a certificate report"),
    "synth": (cmd_synth, "one-shot synthesis dump at x0"),
    "rpi": (cmd_rpi, "terminal-set computation dump"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="experiment manifest (YAML)")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (overrides config)")
    common.add_argument("--seeds", type=int, metavar="K",
                        help="disturbance realizations per profile")
    common.add_argument("--jobs", type=int, default=1, metavar="K",
                        help="worker processes for independent runs")
    common.add_argument("--tol", type=float, metavar="W",
                        help="gamma bisection width")
    parser = argparse.ArgumentParser(
        prog="regreth",
        description="Safe receding horizon synthesis benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config \
        else ExperimentConfig()
    if args.seeds is not None:
        cfg = replace(cfg, seeds=args.seeds)
    if args.tol is not None:
        cfg = replace(cfg, gamma_tol=args.tol)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def main(argv=None):
    level = os.environ.get("REGRETH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        fn = COMMANDS[args.command][0]
        return fn(cfg, jobs=args.jobs, out_dir=args.out)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
