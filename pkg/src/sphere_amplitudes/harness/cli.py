"""``verify <suite>``: run a verification suite and emit its report."""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from .config import SUITES, ConfigError, Scenario, load_scenario
from .report import emit, merge
from .suites import ValidationError, run

WORKERS_ENV = "VERIFY_WORKERS"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="verify", description="Run a verification suite and write its report.")
    p.add_argument("suite", help=f"one of: {', '.join(SUITES)}, all")
    p.add_argument("--config", help="YAML scenario file")
    p.add_argument("--seed", type=int, help="seed for the suite's random generator (unsigned 64-bit)")
    p.add_argument("--resolution", type=int, help="mesh resolution (angular vertex count)")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("json", "csv", "text"), help="report format (default json)")
    return p


def _scenario(args, suite: str) -> Scenario:
    scn = load_scenario(args.config) if args.config else Scenario(suite=suite)
    if args.config and scn.suite != suite and suite != "all":
        raise ConfigError(f"{args.config}: suite {scn.suite!r} does not match the command line suite {suite!r}")
    updates = {"suite": suite if suite != "all" else scn.suite}
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        updates["seed"] = args.seed
    if args.resolution is not None:
        if args.resolution < 8:
            raise ConfigError("--resolution must be at least 8")
        updates["resolution"] = args.resolution
    if args.format is not None:
        updates["format"] = args.format
    if args.out is not None:
        updates["output"] = args.out
    return replace(scn, **updates)


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    if args.suite not in SUITES and args.suite != "all":
        parser.print_usage(sys.stderr)
        print(f"verify: error: unknown suite {args.suite!r} (choose from {', '.join(SUITES)}, all)", file=sys.stderr)
        return 2
    try:
        base = _scenario(args, args.suite)
        if args.suite == "all":
            scenarios = [replace(base, suite=s) for s in SUITES]
            workers = _workers()
            if workers > 1:
                with ProcessPoolExecutor(workers) as pool:
                    reports = list(pool.map(run, scenarios))
            else:
                reports = [run(s) for s in scenarios]
            report = merge(reports)
        else:
            report = run(base)
    except (ConfigError, ValidationError) as exc:
        print(f"verify: error: {exc}", file=sys.stderr)
        return 2
    text_format = base.format
    try:
        if base.output:
            emit(report, base.output, text_format)
        else:
            sys.stdout.write(report.render(text_format))
    except OSError as exc:
        print(f"verify: error: {exc}", file=sys.stderr)
        return 2
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
