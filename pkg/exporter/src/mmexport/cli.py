"""Command line for the exporter. Exit codes: 0 success, 1 row-level
export failures, 2 usage/config errors."""

from __future__ import annotations

import argparse
import sys

from .catalog import CatalogError
from .errors import EncoderError
from .export import ExportError, ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmexport",
        description="Encode a product catalog into mmfuse embedding files.",
    )
    parser.add_argument("--catalog", required=True, help="CSV: sample_id,title,description,image,label")
    parser.add_argument("--out", required=True, help="output dataset directory")
    parser.add_argument("--text-encoder-f", default="hashed:64:flaubert",
                        help="first text encoder id (default hashed:64:flaubert)")
    parser.add_argument("--text-encoder-c", default="hashed:64:camembert",
                        help="second text encoder id (default hashed:64:camembert)")
    parser.add_argument("--image-encoder", default="patch-stats:128",
                        help="per-region image encoder id (default patch-stats:128)")
    parser.add_argument("--grid-side", type=int, default=16,
                        help="regions per image = grid_side^2 (default 16)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(
        catalog=args.catalog,
        out_dir=args.out,
        text_encoder_f=args.text_encoder_f,
        text_encoder_c=args.text_encoder_c,
        image_encoder=args.image_encoder,
        grid_side=args.grid_side,
    )
    try:
        descriptor = export(job)
    except ExportError as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return 1
    except (CatalogError, EncoderError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote dataset -> {descriptor}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
