from __future__ import annotations

import argparse

from commands._shared import positive_int, run_config
from errors import UsageError
from synth import MANIFEST_NAME, synthesize


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("synth", help="write a synthetic SVST corpus")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--pairs", type=positive_int, default=32)
    parser.add_argument("--sources", type=positive_int, default=8)
    parser.add_argument("--seed", type=int, default=None, help="defaults to the config seed")
    parser.add_argument("--frames", type=positive_int, default=8, help="frames per clip")
    parser.add_argument(
        "--frame-size", type=positive_int, default=None, help="square frame side; defaults to encoder.frame_h"
    )
    parser.set_defaults(handler=cmd_synth)


def cmd_synth(args: argparse.Namespace) -> int:
    config = run_config(args)
    size = args.frame_size or config.encoder.frame_h
    if args.frame_size is None and config.encoder.frame_h != config.encoder.frame_w:
        raise UsageError("synthetic frames are square; pass --frame-size")
    seed = config.seed if args.seed is None else args.seed
    manifest = synthesize(
        args.out,
        pairs=args.pairs,
        sources=args.sources,
        seed=seed,
        frame_size=size,
        frames_per_clip=args.frames,
    )
    print(f"[synth] {len(manifest)} records -> {manifest.base_dir / MANIFEST_NAME}")
    return 0
