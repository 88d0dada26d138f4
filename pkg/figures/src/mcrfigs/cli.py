"""Console entry points: render-curves and render-heatmap."""

import argparse
import sys

from .render import InputFormatError, render_curves, render_heatmap


def main_curves(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render-curves",
        description="Plot delta-R convergence curves from metrics.csv exports",
    )
    parser.add_argument("metrics", nargs="+", help="metrics.csv files, one line each")
    parser.add_argument("-o", "--out", required=True, help="output PNG path")
    args = parser.parse_args(argv)
    try:
        render_curves(args.metrics, args.out)
    except InputFormatError as exc:
        print(f"render-curves: {exc}", file=sys.stderr)
        return 2
    return 0


def main_heatmap(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render-heatmap",
        description="Plot a class-sorted Gram heatmap from gram.csv exports",
    )
    parser.add_argument("gram", help="gram.csv (square, headerless)")
    parser.add_argument("meta", help="gram_meta.json with class boundaries")
    parser.add_argument("-o", "--out", required=True, help="output PNG path")
    args = parser.parse_args(argv)
    try:
        render_heatmap(args.gram, args.meta, args.out)
    except InputFormatError as exc:
        print(f"render-heatmap: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main_curves())
