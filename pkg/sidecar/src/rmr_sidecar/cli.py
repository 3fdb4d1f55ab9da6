"""rmr-embed: compute embeddings for datasets and live queries.

Exit codes: 0 success, 2 usage/configuration error, 3 data or IO error,
4 encoder load failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Sequence

from .encoders import get_encoder
from .errors import EncoderLoadFailure, ImageDecodeError, IoFailure, UsageError
from .pipeline import embed_dataset, embed_query

DEFAULT_ENCODER = "clip:clip-ViT-B-32"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmr-embed",
        description="Embed datasets and queries into the interchange format",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_dataset = sub.add_parser("dataset", help="embed every row of a dataset")
    p_dataset.add_argument("--dataset", required=True, help="input dataset file")
    p_dataset.add_argument(
        "--format", default="scienceqa_json",
        choices=["scienceqa_json", "generic_jsonl"],
    )
    p_dataset.add_argument("--out", required=True, help="interchange JSONL output path")
    p_dataset.add_argument(
        "--encoder", default=DEFAULT_ENCODER,
        help="'clip:<checkpoint>' or 'lexical-color-v1'",
    )
    p_dataset.add_argument("--image-root", help="directory resolving image refs")
    p_dataset.add_argument("--batch-size", type=int, default=32)
    p_dataset.add_argument(
        "--text-fields", default="question+hint",
        choices=["question", "question+hint"],
        help="which text goes into the text embedding",
    )
    p_dataset.add_argument("--split", help="keep only records with this split tag")

    p_query = sub.add_parser("query", help="embed one query, print the record JSON")
    p_query.add_argument("--text", help="query text")
    p_query.add_argument("--image", help="query image path")
    p_query.add_argument(
        "--encoder", default=DEFAULT_ENCODER,
        help="'clip:<checkpoint>' or 'lexical-color-v1'",
    )
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        encoder = get_encoder(args.encoder)
        if args.command == "dataset":
            written = embed_dataset(
                args.dataset,
                args.out,
                encoder,
                format_tag=args.format,
                batch_size=args.batch_size,
                image_root=args.image_root,
                text_fields=args.text_fields,
                split=args.split,
            )
            print(f"embedded {written} records (dim {encoder.dim}) -> {args.out}")
            return 0
        record = embed_query(encoder, text=args.text, image_path=args.image)
        json.dump(record, sys.stdout, ensure_ascii=False)
        print()
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (IoFailure, ImageDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except EncoderLoadFailure as exc:
        print(f"encoder error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
