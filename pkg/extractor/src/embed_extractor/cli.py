"""Command-line interface: embed-extract."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .corpus_reader import CorpusReadError
from .encoders import EncoderError, ExtractorConfig
from .pipeline import extract
from .store_writer import StoreWriteError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-extract",
        description="Embed corpus audio clips and response sentences into "
        "two embedding store files.",
    )
    parser.add_argument("--encoder", required=True,
                        help="encoder family, e.g. ms-clap or laion-clap")
    parser.add_argument("--corpus", required=True, help="corpus JSONL file")
    parser.add_argument("--audio-root", required=True,
                        help="directory audio_ref paths resolve against")
    parser.add_argument("--out-audio", required=True, help="audio store output path")
    parser.add_argument("--out-text", required=True, help="text store output path")
    parser.add_argument("--strip-prefix", action="store_true",
                        help="strip leading boilerplate before embedding text")
    parser.add_argument("--batch", type=int, default=8, help="encoder batch size")
    parser.add_argument("--device", default="cpu", help="device hint for the encoder")
    parser.add_argument("--window-policy", choices=["center", "mean"], default="center",
                        help="handling for audio longer than the encoder window")
    parser.add_argument("--lenient", action="store_true",
                        help="skip unreadable audio instead of failing")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = ExtractorConfig(
        encoder=args.encoder,
        corpus_path=Path(args.corpus),
        audio_root=Path(args.audio_root),
        out_audio=Path(args.out_audio),
        out_text=Path(args.out_text),
        strip_prefix_for_text=args.strip_prefix,
        batch_size=args.batch,
        device=args.device,
        window_policy=args.window_policy,
        lenient=args.lenient,
    )
    try:
        result = extract(config)
    except (CorpusReadError, EncoderError, StoreWriteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"embedded {result.embedded} sample(s) with {result.encoder_name} "
        f"(dim {result.dim}) -> {args.out_audio}, {args.out_text}"
    )
    if result.skipped:
        print(f"skipped {len(result.skipped)} sample(s): {', '.join(result.skipped)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
