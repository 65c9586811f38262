"""flashdex-embed: export embeddings from a corpus store to an FDXE file."""

from __future__ import annotations

import argparse
import sys

from .bridge import (
    DEFAULT_HASH_DIM,
    DEFAULT_HASH_SEED,
    DEFAULT_MODEL,
    BridgeConfig,
    BridgeError,
    export_embeddings,
)
from .formats import BridgeFormatError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flashdex-embed",
        description="Encode corpus units with a sentence encoder (or the "
        "deterministic hash test mode) into an FDXE embedding file.",
    )
    parser.add_argument("--corpus", required=True, help="corpus store (FDXC)")
    parser.add_argument("--out", required=True, help="embedding output path (FDXE)")
    parser.add_argument("--mode", default="model", choices=["model", "hash"])
    parser.add_argument("--model", default=DEFAULT_MODEL, help="sentence-encoder name")
    parser.add_argument("--batch", type=int, default=64, help="encoding batch size")
    parser.add_argument(
        "--normalize",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="L2-normalize rows (model mode)",
    )
    parser.add_argument("--granularity", default="sent",
                        choices=["doc", "document", "sent", "sentence"])
    parser.add_argument("--dim", type=int, default=DEFAULT_HASH_DIM, help="hash mode dimension")
    parser.add_argument("--seed", type=int, default=DEFAULT_HASH_SEED, help="hash mode seed")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = BridgeConfig(
        corpus_path=args.corpus,
        output_path=args.out,
        mode=args.mode,
        model_name=args.model,
        batch_size=args.batch,
        normalize=args.normalize,
        granularity=args.granularity,
        dim=args.dim,
        seed=args.seed,
    )
    try:
        n, d = export_embeddings(config)
    except (BridgeError, BridgeFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {n} embeddings at d={d} -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
