"""Command-line front end.

Three subcommands: ``run`` evaluates a fixture and emits a plain-text
report, ``sweep`` grids over hyperparameters and emits CSV, ``render``
writes similarity-map and cluster images as PPM files.

Exit codes: 0 on success, 1 for broken or missing fixture data
(including an unknown sample id), 2 for usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import FixtureError, TensorFormatError, ValidationError
from .pipeline import (
    format_report,
    resolve_config,
    run_fixture,
    run_sample,
    run_sweep,
)
from .render import render_labels, render_similarity, write_ppm
from .scoring import OVERLAP_METRICS, OVERLAP_UNION_IOU
from .tensorio import load_fixture


def _topk_value(text: str):
    if text == "cluster":
        return None
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected 'cluster' or a positive integer, got {text!r}"
        )
    if value < 1:
        raise argparse.ArgumentTypeError(f"topk must be >= 1, got {value}")
    return value


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--fixture", required=True, help="fixture directory")
    sub.add_argument("--layer", type=int, default=None, help="encoder exit layer")
    sub.add_argument("--delta", type=float, default=None, help="cluster threshold in [0, 1]")
    sub.add_argument("--alpha", type=float, default=None, help="negative score weight, >= 0")
    sub.add_argument("--gamma", type=float, default=None, help="sentence/noun blend in [0, 1]")
    sub.add_argument(
        "--topk",
        type=_topk_value,
        default=None,
        help="shortlist size: 'cluster' (default) or a positive integer",
    )
    sub.add_argument("--connectivity", type=int, choices=(4, 8), default=4)
    sub.add_argument(
        "--overlap-metric", choices=OVERLAP_METRICS, default=OVERLAP_UNION_IOU
    )
    sub.add_argument("--jobs", type=int, default=1, help="worker threads over samples")


def _check_ranges(parser: argparse.ArgumentParser, args) -> None:
    if args.delta is not None and not 0.0 <= args.delta <= 1.0:
        parser.error(f"--delta must be in [0, 1], got {args.delta}")
    if args.alpha is not None and args.alpha < 0.0:
        parser.error(f"--alpha must be >= 0, got {args.alpha}")
    if args.gamma is not None and not 0.0 <= args.gamma <= 1.0:
        parser.error(f"--gamma must be in [0, 1], got {args.gamma}")
    if args.jobs < 1:
        parser.error(f"--jobs must be >= 1, got {args.jobs}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchref",
        description="Referring-segmentation engine over pre-extracted embeddings.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    run_p = subs.add_parser("run", help="evaluate a fixture and print a report")
    _add_common(run_p)
    run_p.add_argument("--out", default=None, help="write the report here instead of stdout")

    sweep_p = subs.add_parser("sweep", help="grid over hyperparameters, CSV output")
    _add_common(sweep_p)
    sweep_p.add_argument("--layers", type=_int_list, default=None, help="comma-separated layers")
    sweep_p.add_argument("--deltas", type=_float_list, default=None, help="comma-separated thresholds")
    sweep_p.add_argument("--alphas", type=_float_list, default=None, help="comma-separated weights")
    sweep_p.add_argument("--gammas", type=_float_list, default=None, help="comma-separated blends")
    sweep_p.add_argument("--out", default=None, help="write the CSV here instead of stdout")

    render_p = subs.add_parser("render", help="write similarity/cluster images as PPM")
    _add_common(render_p)
    render_p.add_argument("--sample", default=None, help="render just this sample id")
    render_p.add_argument("--out", required=True, help="output directory")
    return parser


def _resolved(args, fixture):
    return resolve_config(
        fixture,
        layer=args.layer,
        delta=args.delta,
        alpha=args.alpha,
        gamma=args.gamma,
        topk=args.topk,
        connectivity=args.connectivity,
        overlap_metric=args.overlap_metric,
        jobs=args.jobs,
    )


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_bytes(text.encode("utf-8"))


def _cmd_run(args) -> int:
    fixture = load_fixture(args.fixture)
    config = _resolved(args, fixture)
    report = run_fixture(fixture, config)
    _emit(format_report(report), args.out)
    return 0


def _cmd_sweep(parser, args) -> int:
    fixture = load_fixture(args.fixture)
    config = _resolved(args, fixture)
    layers = args.layers if args.layers is not None else [config.layer]
    deltas = args.deltas if args.deltas is not None else [config.delta]
    alphas = args.alphas if args.alphas is not None else [config.alpha]
    gammas = args.gammas if args.gammas is not None else [config.gamma]
    if not (layers and deltas and alphas and gammas):
        parser.error("sweep grid has an empty axis")
    for delta in deltas:
        if not 0.0 <= delta <= 1.0:
            parser.error(f"--deltas values must be in [0, 1], got {delta}")
    for alpha in alphas:
        if alpha < 0.0:
            parser.error(f"--alphas values must be >= 0, got {alpha}")
    for gamma in gammas:
        if not 0.0 <= gamma <= 1.0:
            parser.error(f"--gammas values must be in [0, 1], got {gamma}")
    csv = run_sweep(fixture, config, layers, deltas, alphas, gammas)
    _emit(csv, args.out)
    return 0


def _cmd_render(args) -> int:
    fixture = load_fixture(args.fixture)
    config = _resolved(args, fixture)
    params = fixture.params(config.layer)
    ids = sorted(fixture.sample_ids)
    if args.sample is not None:
        fixture.entry(args.sample)  # unknown id raises before any output
        ids = [args.sample]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    height = fixture.manifest.height
    width = fixture.manifest.width
    for sid in ids:
        record = fixture.sample(sid, config.layer)
        result = run_sample(record, params, config)
        write_ppm(
            render_similarity(result.spatial.raw, height, width),
            out_dir / f"{sid}-map.ppm",
        )
        write_ppm(
            render_labels(result.clusters.labels, height, width),
            out_dir / f"{sid}-clusters.ppm",
        )
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _check_ranges(parser, args)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(parser, args)
        return _cmd_render(args)
    except (FixtureError, TensorFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
