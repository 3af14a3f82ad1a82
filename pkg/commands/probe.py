from __future__ import annotations

import argparse

from alignment import GexiaModel, embed_records, train_probe
from checkpoint import load_checkpoint
from commands._shared import positive_int, print_rows
from errors import UsageError
from featurizer import ClipDataset
from iam import IterPolicy
from manifest import Manifest


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("probe", help="linear source_id probe on video embeddings")
    parser.add_argument("--ckpt", required=True)
    parser.add_argument("--data", required=True)
    parser.add_argument("--steps", type=positive_int, default=300)
    parser.add_argument("--lr", type=float, default=0.05)
    parser.add_argument("--granularity", default="SVST")
    parser.set_defaults(handler=cmd_probe)


def cmd_probe(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt, with_optimizer=False)
    model = GexiaModel.from_checkpoint(ckpt)
    manifest = Manifest.read(args.data).filter(args.granularity)
    records = list(manifest)
    classes = sorted({record.source_id for record in records})
    if len(classes) < 2:
        raise UsageError(f"probing needs at least two source ids among {args.granularity} records")
    labels = [classes.index(record.source_id) for record in records]
    video, _ = embed_records(
        model,
        ClipDataset(manifest, model.encoder),
        records,
        IterPolicy.from_config(ckpt.config.iter_policy),
    )
    result = train_probe(video, labels, len(classes), steps=args.steps, lr=args.lr, seed=ckpt.config.seed)
    print_rows(
        [
            {
                "records": len(records),
                "classes": len(classes),
                "accuracy": result.accuracy,
                "final_loss": result.losses[-1],
            }
        ]
    )
    return 0
