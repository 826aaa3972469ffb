"""Command line front end: a PlotSpec JSON or flags mirroring it.

Exit codes follow the exporting package's convention: 0 on success and
2 when the request or its inputs violate the contract.
"""

from __future__ import annotations

import argparse
import sys

from .figures import render
from .spec import KINDS, PlotSpec, PlotSpecError, spec_from_json


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reportplot",
        description="Draw one figure from exported metric files.")
    parser.add_argument("--spec", metavar="JSON",
                        help="PlotSpec document; replaces all other flags")
    parser.add_argument("--kind", choices=KINDS)
    parser.add_argument("--input", action="append", default=[],
                        metavar="FILE", help="metric file (repeatable)")
    parser.add_argument("--out", metavar="IMAGE", help="output .png or .svg")
    parser.add_argument("--title")
    parser.add_argument("--dpi", type=int, default=100)
    parser.add_argument("--logy", choices=("on", "off"),
                        help="override the kind's default y scale")
    parser.add_argument("--y-column", dest="y_column",
                        help="metric column for the learning kind")
    return parser


def _spec_from_args(args) -> PlotSpec:
    if args.spec:
        extras = [flag for flag, value in (
            ("--kind", args.kind), ("--input", args.input or None),
            ("--out", args.out), ("--title", args.title),
            ("--logy", args.logy), ("--y-column", args.y_column))
            if value is not None]
        if extras or args.dpi != 100:
            raise PlotSpecError(
                f"--spec replaces the other flags, drop {extras or ['--dpi']}")
        return spec_from_json(args.spec)
    if not args.kind or not args.input or not args.out:
        raise PlotSpecError("either --spec or all of --kind/--input/--out")
    return PlotSpec(kind=args.kind, inputs=tuple(args.input), out=args.out,
                    title=args.title, dpi=args.dpi,
                    logy=None if args.logy is None else args.logy == "on",
                    y_column=args.y_column)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = render(_spec_from_args(args))
    except PlotSpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
