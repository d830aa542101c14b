"""``bench run <config> [--levels 1,2] [--out DIR] [--format csv|markdown] [--compare REF --tol 0.25]``.

Exit status: 0 on success, 1 if the comparison fails, 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .runner import run_experiment
from .tables import compare_tables, emit_table, read_table

EXIT_OK, EXIT_COMPARE, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _levels(text: str) -> list[int]:
    try:
        levels = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid level list {text!r}") from None
    if not levels or any(lv < 0 for lv in levels):
        raise argparse.ArgumentTypeError(f"invalid level list {text!r}")
    return levels


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bench", description="MINRES iteration-count sweeps for the model saddle-point problems.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run a sweep described by an INI config file")
    run.add_argument("config", help="experiment configuration (INI)")
    run.add_argument("--levels", type=_levels, help="comma-separated mesh levels (overrides the config)")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--format", choices=("csv", "markdown"), default="markdown", help="table format on stdout")
    run.add_argument("--compare", metavar="REFERENCE", help="reference table (CSV) to compare against")
    run.add_argument("--tol", type=float, default=0.25, help="relative tolerance per cell (default 0.25)")
    run.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.levels:
            cfg = cfg.with_levels(args.levels)
        if args.out:
            cfg = cfg.with_output(args.out)
        reference = read_table(args.compare) if args.compare else None
        if args.tol < 0:
            raise ConfigError("--tol must be non-negative")
        result = run_experiment(cfg)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"bench: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(emit_table(result.table, args.format))
    if not result.all_consistent:
        print("warning: a dimensional-consistency check failed (see consistency.txt)", file=sys.stderr)
    if reference is None:
        return EXIT_OK
    try:
        report = compare_tables(result.table, reference, args.tol)
    except ValueError as exc:
        print(f"bench: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(report)
    return EXIT_OK if report.passed else EXIT_COMPARE


if __name__ == "__main__":
    sys.exit(main())
