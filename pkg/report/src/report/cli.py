"""Command line: report <kind> <inputs...> -o <image>."""

from __future__ import annotations

import argparse
import sys

from .metrics_io import MetricsSchemaError, load_metrics
from .plots import KINDS, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="report",
        description="Draw figures from solver benchmark metrics files.",
    )
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("inputs", nargs="+", help="metrics csv files")
    parser.add_argument("-o", "--output", required=True, help="image path")
    parser.add_argument("--log-x", action="store_true")
    parser.add_argument("--log-y", action="store_true")
    args = parser.parse_args(argv)

    try:
        runs = load_metrics(args.inputs)
        render(args.kind, runs, args.output, log_x=args.log_x, log_y=args.log_y)
    except (MetricsSchemaError, OSError) as err:
        print(f"report: {err}", file=sys.stderr)
        return 1
    print(f"wrote {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
