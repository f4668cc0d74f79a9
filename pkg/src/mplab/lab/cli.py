"""Command line: ``mplab run --scenario <file> --out <dir> [--seed N] [--threads N]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiments import run
from .report import write_result
from .scenario import ScenarioError, load_scenario

log = logging.getLogger("mplab")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mplab", description="Run a magnetic-field energy scenario.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario file")
    r.add_argument("--scenario", required=True, help="scenario file (key = value format)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--threads", type=int, default=1, help="rows evaluated concurrently")
    r.add_argument("--no-figures", action="store_true", help="skip the matplotlib figures")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        sc = load_scenario(args.scenario, args.seed)
    except (OSError, ScenarioError) as exc:
        log.error("cannot load scenario: %s", exc)
        return 2
    result = run(sc, max(1, args.threads))
    figures = bool(sc.output.get("figures", True)) and not args.no_figures
    paths = write_result(result, args.out, figures=figures)
    for a in result.assertions:
        log.info("%s  %s  (%.6g; %s)", "PASS" if a.passed else "FAIL", a.claim, a.value, a.limit)
    log.info("report: %s", paths["report"])
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
