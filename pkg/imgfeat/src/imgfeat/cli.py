"""Command line: scan an image directory, QC-filter, extract hourly feature
vectors, and write the feature file the forecasting pipeline ingests."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .emit import emit_feature_file
from .extract import Extractor, process_directory
from .qc import QcConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imgfeat",
        description="Solar-image quality filtering and hourly feature extraction",
    )
    parser.add_argument("--input-dir", required=True, help="directory of images")
    parser.add_argument("--output", required=True, help="feature file to write")
    parser.add_argument("--binary", action="store_true",
                        help="write the binary variant instead of text")
    parser.add_argument("--inner", type=float, default=0.7,
                        help="inner ring radius as a fraction of the half-width")
    parser.add_argument("--outer", type=float, default=0.95,
                        help="outer ring radius as a fraction of the half-width")
    parser.add_argument("--dark-threshold", type=float, default=0.1,
                        help="intensity below which a pixel counts as dark")
    parser.add_argument("--reject-ratio", type=float, default=0.14,
                        help="discard images whose dark ring ratio exceeds this")
    parser.add_argument("--no-pretrained", action="store_true",
                        help="skip the pretrained-weight download attempt")
    parser.add_argument("--seed", type=int, default=0,
                        help="initialization seed for the offline fallback")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        qc = QcConfig(inner=args.inner, outer=args.outer,
                      dark_threshold=args.dark_threshold,
                      reject_ratio=args.reject_ratio)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    input_dir = Path(args.input_dir)
    if not input_dir.is_dir():
        print(f"error: not a directory: {input_dir}", file=sys.stderr)
        return 1
    extractor = Extractor(pretrained=not args.no_pretrained, seed=args.seed)
    records = process_directory(input_dir, qc=qc, extractor=extractor)
    emit_feature_file(records, args.output, binary=args.binary)
    kind = "binary" if args.binary else "text"
    print(f"wrote {len(records)} hourly records ({kind}) -> {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
