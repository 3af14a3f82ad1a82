from __future__ import annotations

import argparse
import logging

from alignment import GexiaModel, logged_step_metrics
from checkpoint import load_checkpoint
from commands._shared import print_rows
from errors import UsageError
from evaluation import ablation_sweep, evaluate_records, parse_iters, retrieval_table
from featurizer import ClipDataset
from iam import IterPolicy
from manifest import Manifest

LOGGER = logging.getLogger(__name__)

DIRECTIONS = {"t2v": "T2V", "v2t": "V2T"}


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("eval", help="retrieval R@K / MdR / MnR on a manifest")
    parser.add_argument("--ckpt", required=True, help="run, checkpoints or step directory")
    parser.add_argument("--data", required=True, help="evaluation manifest (JSONL)")
    parser.add_argument(
        "--iters",
        action="append",
        type=parse_iters,
        default=[],
        metavar="V-T",
        help="inference (video, text) iterations; repeat for a sweep",
    )
    parser.add_argument("--direction", choices=(*DIRECTIONS, "both"), default="both")
    parser.add_argument("--granularity", default=None, help="evaluate only these records")
    parser.set_defaults(handler=cmd_eval)


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt, with_optimizer=False)
    logged = logged_step_metrics(ckpt)
    if logged is not None:
        LOGGER.info(
            "[eval] checkpoint step %d: loss %.4f, tau %.4f (%s)",
            ckpt.step,
            logged["loss"],
            logged["tau"],
            logged["granularity"],
        )
    model = GexiaModel.from_checkpoint(ckpt)
    policy = IterPolicy.from_config(ckpt.config.iter_policy)
    manifest = Manifest.read(args.data)
    if args.granularity is not None:
        manifest = manifest.filter(args.granularity)
    records = list(manifest)
    if not records:
        raise UsageError("no records to evaluate")
    dataset = ClipDataset(manifest, model.encoder)

    if args.iters:
        rows = ablation_sweep(model, dataset, records, policy, args.iters)
    else:
        rows = retrieval_table([(None, evaluate_records(model, dataset, records, policy))])
    if args.direction != "both":
        rows = [row for row in rows if row["direction"] == DIRECTIONS[args.direction]]
    print_rows(rows)
    return 0
