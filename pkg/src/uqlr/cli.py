"""Command line entry point ``uqlr``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import BC_MODES, METHODS, PRESETS, ConfigError, parse_config
from .runlog import NumericalFailure
from .runner import parse_ranks, run_experiment, run_sweep

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uqlr", description="Uncertain Burgers solvers: SG, filtered SG and low-rank.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", help="key = value configuration file")
    run.add_argument("--preset", choices=sorted(PRESETS))
    run.add_argument("--method", choices=METHODS)
    run.add_argument("--rank", type=int)
    run.add_argument("--lambda", dest="lam", type=float)
    run.add_argument("--bc", dest="bc_mode", choices=BC_MODES)
    run.add_argument("--out")

    sweep = sub.add_parser("sweep", help="rank / moment-count error sweep")
    sweep.add_argument("--config")
    sweep.add_argument("--preset", choices=sorted(PRESETS))
    sweep.add_argument("--ranks", default="2..16", help="e.g. 2..16 or 2,4,9,16")
    sweep.add_argument("--sg-moments", default="4,9,16", help="comma separated square numbers")
    sweep.add_argument("--methods", default="dlra-psi", help="comma separated low-rank methods")
    sweep.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            overrides = {"method": args.method, "rank": args.rank, "lam": args.lam,
                         "bc_mode": args.bc_mode, "out": args.out}
            cfg = parse_config(args.config, overrides, preset=args.preset)
            summary = run_experiment(cfg)
            print(f"{cfg.method}: err_mean={summary['err_mean']:.6e} err_var={summary['err_var']:.6e} -> {cfg.out}")
        else:
            cfg = parse_config(args.config, {"out": args.out}, preset=args.preset)
            methods = [m.strip() for m in args.methods.split(",") if m.strip()]
            for m in methods:
                if m not in METHODS or "dlra" not in m:
                    raise ConfigError("methods", f"{m!r} is not a low-rank method")
            ranks = parse_ranks(args.ranks)
            moments = parse_ranks(args.sg_moments) if args.sg_moments.strip() else []
            path = run_sweep(cfg, ranks, moments, args.out, methods=methods)
            print(f"wrote {path}")
    except ConfigError as exc:
        print(f"uqlr: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"uqlr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"uqlr: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
