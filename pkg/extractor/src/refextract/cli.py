"""Command line entry point."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ExtractorError
from .extract import ExtractionSpec, run_extraction


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layer list {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refextract",
        description="Extract an evaluation fixture from images and expressions.",
    )
    parser.add_argument("--model", required=True,
                        help="backbone tag; toy* runs the hash-seeded stand-in")
    parser.add_argument("--layers", required=True, type=_int_list,
                        help="comma-separated exit layers to dump")
    parser.add_argument("--images", required=True,
                        help="dataset slice JSON (sample ids, image and mask paths)")
    parser.add_argument("--out", required=True, help="fixture output directory")
    parser.add_argument("--d-star", type=int, default=32,
                        help="toy backbone hidden width")
    parser.add_argument("--d", type=int, default=16,
                        help="toy backbone joint-space width")
    parser.add_argument("--grid", type=int, default=7,
                        help="toy backbone patch grid side")
    parser.add_argument("--cell", type=int, default=8,
                        help="toy backbone pixels per patch cell")
    parser.add_argument("--max-masks", type=int, default=8)
    parser.add_argument("--quant-levels", type=int, default=4)
    parser.add_argument("--min-area", type=float, default=0.01,
                        help="smallest proposal, as a fraction of the frame")
    parser.add_argument("--blur-radius", type=int, default=4)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if not args.layers:
        build_parser().error("--layers must list at least one layer")

    spec = ExtractionSpec(
        model=args.model,
        layers=args.layers,
        d_star=args.d_star,
        d=args.d,
        grid=args.grid,
        cell=args.cell,
        max_masks=args.max_masks,
        quant_levels=args.quant_levels,
        min_area_frac=args.min_area,
        blur_radius=args.blur_radius,
    )
    try:
        summary = run_extraction(spec, args.images, args.out)
    except (ExtractorError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    skipped = f", skipped {len(summary.skipped)}" if summary.skipped else ""
    print(f"wrote {len(summary.written)} samples to {summary.out_dir}{skipped}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
