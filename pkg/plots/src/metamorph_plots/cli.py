"""Command line entry point: ``metamorph-plot <kind> <artifact-dir> -o out.png``."""

from __future__ import annotations

import argparse
import sys

from .plotting import SchemaError, plot_separation, plot_snapshots


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="metamorph-plot",
        description="Render figures from metamorph CLI artifact directories.")
    parser.add_argument("kind", choices=["separation", "snapshots"],
                        help="figure kind")
    parser.add_argument("directory", help="artifact directory")
    parser.add_argument("-o", "--output", default=None,
                        help="output image path (default: inside directory)")
    parser.add_argument("--stride", type=int, default=1,
                        help="keep every stride-th snapshot frame")
    args = parser.parse_args(argv)

    try:
        if args.kind == "separation":
            out = plot_separation(args.directory, output=args.output)
        else:
            out = plot_snapshots(args.directory, stride=args.stride,
                                 output=args.output)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
