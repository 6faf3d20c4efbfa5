"""``makoop`` command line: simulate | fit | analyze | control | report.

On success a JSON summary goes to stdout and the exit status is 0. Every
failure prints one JSON object ``{"error": code, "message": ...}`` to stderr
and exits nonzero (2 for usage/config errors, 3 for numerical failures,
1 for anything else).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

from . import __version__
from .config import PROFILES, load_config
from .errors import ConfigError, MakoopError

EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_OTHER = 1

COMMANDS = ("simulate", "fit", "analyze", "control", "report")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser():
    p = _Parser(prog="makoop", description="Multi-agent Koopman modelling, analysis and game-theoretic control.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML or JSON experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", metavar="DIR", help="output directory (default: config 'out')")
    common.add_argument("--profile", choices=sorted(PROFILES), default="desk", help="size profile (default: desk)")
    common.add_argument("--variant", choices=("flat", "hier"), help="override the benchmark variant")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="integrate the benchmark and write CSV trajectories")
    sub.add_parser("fit", parents=[common], help="generate data, fit and evaluate a structured model")
    for name, text in (("analyze", "transient and gramian metrics of a fitted model"),
                       ("control", "baseline, optimum and equilibrium on sampled ICs")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--model-dir", metavar="DIR", help="directory holding model.npz (default: --out)")
    sub.add_parser("report", parents=[common], help="run missing steps, render figures and a summary")
    return p


def _clean(obj):
    """Make summaries strict-JSON (non-finite floats become strings)."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _clean(obj.tolist())
    return obj


def _fail(code, message, status, **extra):
    sys.stderr.write(json.dumps({"error": code, "message": message, **extra}) + "\n")
    return status


def run(argv=None) -> int:
    from . import experiments

    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.profile, seed=args.seed, out=args.out, variant=args.variant)
        out = cfg.out
        if args.command == "simulate":
            summary = experiments.run_simulate(cfg, out)
        elif args.command == "fit":
            summary = experiments.run_fit(cfg, out)
        elif args.command == "analyze":
            summary = experiments.run_analyze(cfg, out, args.model_dir)
        elif args.command == "control":
            summary = experiments.run_control(cfg, out, args.model_dir)
        else:
            summary = experiments.run_report(cfg, out)
    except ConfigError as exc:
        return _fail(exc.code, str(exc), EXIT_USAGE)
    except MakoopError as exc:
        return _fail(exc.code, str(exc), EXIT_NUMERICAL, type=type(exc).__name__)
    except OSError as exc:
        return _fail("io_error", str(exc), EXIT_OTHER)
    except Exception as exc:  # last resort: still machine readable
        return _fail("internal", f"{type(exc).__name__}: {exc}", EXIT_OTHER)
    sys.stdout.write(json.dumps(_clean({"status": "ok", **summary}), indent=2) + "\n")
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
