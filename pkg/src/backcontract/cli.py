"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 the data violate a
hypothesis of the bound (uncertified rate, polynomial tail exponent <= 2, no
admissible rate).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import (ConfigurationError, DerivationFailure, DomainError, HypothesisViolation,
                     PreconditionError)
from .pipeline import STAGES, run_stage

EXIT_OK, EXIT_USAGE, EXIT_HYPOTHESIS = 0, 2, 3

log = logging.getLogger("backcontract")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="backcontract", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "profile": "estimate hitting-time tails and classify their decay",
        "rates": "derive the backward rate b_n and evaluate the convergence series",
        "backward": "enumerate pre-image trees, fit the backward bound, check chain inclusion",
        "chains": "concatenation check, first-entry histogram and tower series",
        "report": "aggregate every stage into report.json",
    }
    for name in STAGES:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="TOML experiment file")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="seed (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        cfg = load_config(args.config, out=args.out, seed=args.seed)
        result = run_stage(args.command, cfg, args.threads)
    except (ConfigurationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HypothesisViolation, DerivationFailure, PreconditionError) as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    if args.command == "report":
        failed = [c["id"] for c in result["checks"] if not c["passed"]]
        log.info("report written; %d checks, failed: %s", len(result["checks"]), failed or "none")
    else:
        log.info("%s stage finished, outputs in %s", args.command, cfg.out_dir)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
