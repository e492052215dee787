"""temt-extract: run pretrained encoders over a JSONL corpus, or verify output.

Exit codes: 0 success, 1 usage error, 2 data/format error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .corpusio import FormatError, validate_corpus_dir
from .encoders import EncoderError
from .extract import extract
from .records import RawCorpusError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class UsageError(Exception):
    pass


def build_parser() -> _Parser:
    parser = _Parser(prog="temt-extract", description=__doc__)
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("extract", help="embed a JSONL corpus into the binary format")
    p.add_argument("--jsonl", required=True, help="input posts, one JSON object per line")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--text-encoder", default="emoberta",
                   choices=("roberta", "emoberta", "minilm"))
    p.add_argument("--image-encoder", default="clip", choices=("clip", "dino"))
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--device", default="cpu")
    p.add_argument("--backend", default="hf", choices=("hf", "stub"),
                   help="stub = offline content-hash embeddings, testing only")
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--val-fraction", type=float, default=0.15)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_extract)

    p = subs.add_parser("verify", help="validate a corpus directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--spot-checks", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def cmd_extract(args) -> int:
    summary = extract(
        args.jsonl,
        text_encoder=args.text_encoder,
        image_encoder=args.image_encoder,
        out_dir=args.out,
        batch_size=args.batch_size,
        device=args.device,
        backend=args.backend,
        train_fraction=args.train_fraction,
        val_fraction=args.val_fraction,
        split_seed=args.split_seed,
    )
    print(json.dumps(summary))
    return 0


def cmd_verify(args) -> int:
    report = validate_corpus_dir(args.corpus, spot_checks=args.spot_checks, seed=args.seed)
    print(json.dumps(report, indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (RawCorpusError, FormatError, EncoderError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
