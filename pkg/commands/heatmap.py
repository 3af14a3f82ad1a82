from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from alignment import GexiaModel
from checkpoint import load_checkpoint
from commands._shared import print_rows
from errors import DataFormatError, UsageError
from evaluation import HeatmapGeometry, alignment_heatmap, dataset_mean_color, parse_iters, write_heatmaps
from featurizer import frames_for, sample_frames
from gxt import read_array
from iam import IterPolicy
from manifest import Manifest


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("heatmap", help="patch-masking alignment score maps")
    parser.add_argument("--ckpt", required=True)
    parser.add_argument("--video", required=True, help="GXT1 u8 frame stack (L x H x W x 3)")
    parser.add_argument("--text", required=True)
    parser.add_argument("--patch", type=int, default=32)
    parser.add_argument("--stride", type=int, default=16)
    parser.add_argument("--fill", choices=("zero", "mean"), default="zero")
    parser.add_argument("--data", default=None, help="manifest whose frames give the mean fill color")
    parser.add_argument("--granularity", default="SVST", help="frame count and default #iter")
    parser.add_argument("--iters", type=parse_iters, default=None, metavar="V-T")
    parser.add_argument("--out", required=True)
    parser.set_defaults(handler=cmd_heatmap)


def cmd_heatmap(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt, with_optimizer=False)
    model = GexiaModel.from_checkpoint(ckpt)
    iters = args.iters or IterPolicy.from_config(ckpt.config.iter_policy).iters_for(args.granularity)
    video = read_array(args.video)
    if video.dtype != np.uint8:
        raise DataFormatError(f"{args.video}: frames must be u8, got {video.dtype}")
    if video.ndim == 3:
        video = video[None]
    frames = sample_frames(video, frames_for(args.granularity, model.encoder))
    fill_color = None
    if args.fill == "mean":
        if args.data is None:
            raise UsageError("--fill mean needs --data MANIFEST for the dataset mean color")
        fill_color = dataset_mean_color(Manifest.read(args.data))
    geometry = HeatmapGeometry(patch=args.patch, stride=args.stride, fill=args.fill, fill_color=fill_color)
    results = alignment_heatmap(model, frames, args.text, iters, geometry)
    write_heatmaps(results, Path(args.out))
    print_rows(
        {
            "frame": result.frame,
            "grid": list(result.scores.shape),
            "baseline": result.baseline,
            "max_score": float(result.scores.max()),
        }
        for result in results
    )
    return 0
