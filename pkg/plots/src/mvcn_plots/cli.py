"""`plot <kind> --in DIR --out FILE [--times t1 t2 ...]`"""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURE_KINDS, render
from .io import SchemaError


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plot", description=__doc__)
    ap.add_argument("kind", choices=sorted(FIGURE_KINDS))
    ap.add_argument("--in", dest="indir", required=True,
                    help="simulation/experiment output directory")
    ap.add_argument("--out", dest="outfile", required=True,
                    help="output image path")
    ap.add_argument("--times", nargs="*", type=float,
                    help="snapshot times to include (default: all)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = render(args.kind, args.indir, args.outfile, times=args.times)
    except (SchemaError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
