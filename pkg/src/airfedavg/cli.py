"""Command-line entry point: ``airfedavg {optimize-power,train,latency,bound}``."""

import argparse
import logging
import sys

from . import experiments as ex
from .config import ExperimentConfig, dump_defaults
from .errors import (
    AirFedAvgError,
    ConfigError,
    DenoisingUndefinedError,
    InfeasibleTargetError,
    NumericalError,
)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("airfedavg")


def _seeds(text):
    try:
        seeds = []
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = part.split("-")
                seeds.extend(range(int(lo), int(hi) + 1))
            elif part:
                seeds.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}; use e.g. 0,1,2 or 0-19")
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def build_parser():
    p = argparse.ArgumentParser(prog="airfedavg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML config (defaults used when omitted)")
        sp.add_argument("--out", help="output directory (overrides experiment.output_dir)")
        sp.add_argument("--seeds", type=_seeds, help="seed list, e.g. 0,1,2 or 0-19")
        sp.add_argument("--workers", type=int, help="worker processes for per-seed runs")

    common(sub.add_parser("optimize-power", help="optimized power schedule and objective trace"))
    common(sub.add_parser("train", help="simulate training for each policy and seed"))
    lp = sub.add_parser("latency", help="minimum training latency, Air vs OMA")
    common(lp)
    lp.add_argument("--target-gap", type=float, help="target optimality-gap bound rho")
    common(sub.add_parser("bound", help="bound tables over a (T, Omega) sweep"))
    sub.add_parser("defaults", help="print the default config as YAML")
    return p


def load_config(args):
    exp = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_dict()
    over = {}
    if args.seeds is not None:
        over["seeds"] = args.seeds
    if args.out is not None:
        over["output_dir"] = args.out
    if args.workers is not None:
        over["workers"] = args.workers
    return exp.with_overrides({"experiment": over}) if over else exp


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s"
    )
    if args.command == "defaults":
        sys.stdout.write(dump_defaults())
        return EXIT_OK
    try:
        exp = load_config(args)
        out = exp.raw["experiment"]["output_dir"]
        if args.command == "optimize-power":
            files = ex.run_optimize_power(exp, out)
        elif args.command == "train":
            files, _ = ex.run_train(exp, out)
        elif args.command == "latency":
            files, _ = ex.run_latency(exp, out, args.target_gap)
        else:
            files, _ = ex.run_bound(exp, out)
    except InfeasibleTargetError as exc:
        log.error("infeasible target: %s", exc)
        return EXIT_INFEASIBLE
    except ConfigError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_CONFIG
    except (NumericalError, DenoisingUndefinedError, FloatingPointError, AirFedAvgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    for f in files:
        log.info("wrote %s", f)
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
