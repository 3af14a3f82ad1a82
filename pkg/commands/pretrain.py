from __future__ import annotations

import argparse
import json

from alignment import train
from checkpoint import has_checkpoint
from commands._shared import positive_int, progress_enabled, run_config
from errors import UsageError
from logger.metrics_logger import MetricsLogger
from manifest import Manifest


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("pretrain", help="train both IAMs with the contrastive loss")
    parser.add_argument("--data", required=True, help="training manifest (JSONL)")
    parser.add_argument("--out", default=None, help="run directory; defaults to run_dir")
    parser.add_argument("--steps", type=positive_int, default=None)
    parser.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    parser.add_argument("--freeze-encoders", action="store_true", help="encoder learning rate 0")
    parser.set_defaults(handler=cmd_pretrain)


def cmd_pretrain(args: argparse.Namespace) -> int:
    overrides: list[str] = []
    if args.out is not None:
        overrides.append(f"run_dir={json.dumps(args.out)}")
    if args.steps is not None:
        overrides.append(f"train.steps={args.steps}")
    if args.freeze_encoders:
        overrides.append('train.encoder_mode="freeze"')
    config = run_config(args, overrides)
    if args.resume and not has_checkpoint(config.run_dir):
        raise UsageError(f"--resume: no checkpoint under {config.run_dir}")
    manifest = Manifest.read(args.data)
    result = train(manifest, config, config.run_dir, resume=args.resume, progress=progress_enabled(args))
    print(
        f"[train] step {result.steps} loss {result.last_loss} -> {result.checkpoint} "
        f"(metrics {result.metrics_path})"
    )
    metrics = MetricsLogger(result.metrics_path)
    last_losses = {
        label: recent[0]["loss"]
        for label in sorted(manifest.histogram())
        if (recent := metrics.read_recent(limit=1, granularity=label))
    }
    print(f"[train] last loss by granularity {json.dumps(last_losses, sort_keys=True)}")
    return 0
