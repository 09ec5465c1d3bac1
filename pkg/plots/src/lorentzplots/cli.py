"""plot <kind> --in CSV [--in CSV2] --out IMG [--style JSON]"""

from __future__ import annotations

import argparse
import json
import sys

from .figures import KINDS, FigureError, FigureSpec, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lorentzgas-plot")
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--in", dest="inputs", action="append", required=True,
                        metavar="CSV")
    parser.add_argument("--out", required=True, metavar="IMG")
    parser.add_argument("--style", default=None, metavar="JSON",
                        help="JSON object with title/xlabel/ylabel keys")
    args = parser.parse_args(argv)
    style = {}
    if args.style:
        with open(args.style) as fh:
            style = json.load(fh)
    try:
        spec = FigureSpec(
            kind=args.kind, inputs=args.inputs, output=args.out,
            title=style.get("title", ""), xlabel=style.get("xlabel", ""),
            ylabel=style.get("ylabel", ""), style=style)
        path = render(spec)
    except (FigureError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
