from __future__ import annotations

import argparse
import asyncio
import json
from pathlib import Path

from client import RemoteSummarizer, build_summarizer
from commands._shared import run_config
from gex import expand
from manifest import Manifest
from summary_store import SummaryCache
from synth import MANIFEST_NAME


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("gex", help="expand an SVST manifest into more granularities")
    parser.add_argument("--input", required=True, help="input manifest (JSONL)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--min-group", type=int, default=None)
    parser.add_argument("--max-children", type=int, default=None)
    parser.add_argument("--summarizer", choices=("extractive", "remote"), default=None)
    parser.add_argument("--prompt-template", default=None, help="file holding a [SENTENCES] prompt")
    parser.add_argument("--cache", default=None, help="sqlite cache for remote summaries")
    parser.add_argument("--with-images", action="store_true")
    parser.add_argument("--random-fallback", action="store_true")
    parser.add_argument("--level", choices=("SVST", "LVLT"), default="SVST")
    parser.set_defaults(handler=cmd_gex)


def _flag_overrides(args: argparse.Namespace) -> list[str]:
    overrides: list[str] = []
    if args.min_group is not None:
        overrides.append(f"gex.min_group={args.min_group}")
    if args.max_children is not None:
        overrides.append(f"gex.max_children={args.max_children}")
    if args.summarizer is not None:
        kind = "remote_chat" if args.summarizer == "remote" else "extractive"
        overrides.append(f"summarizer.kind={kind}")
    if args.prompt_template is not None:
        overrides.append(f"summarizer.prompt_template_file={json.dumps(args.prompt_template)}")
    if args.cache is not None:
        overrides.append(f"summarizer.cache_path={json.dumps(args.cache)}")
    if args.with_images:
        overrides.append("gex.with_images=true")
    if args.random_fallback:
        overrides.append("gex.random_fallback=true")
    return overrides


def cmd_gex(args: argparse.Namespace) -> int:
    config = run_config(args, _flag_overrides(args))
    config.summarizer.validate(require_credentials=True)
    manifest = Manifest.read(args.input)

    async def run() -> None:
        cache: SummaryCache | None = None
        if config.summarizer.kind == "remote_chat" and config.summarizer.cache_path:
            cache = SummaryCache(config.summarizer.cache_path)
            await cache.initialize()
        summarizer = build_summarizer(config.summarizer, cache=cache)
        try:
            expanded, report = await expand(
                manifest,
                config.gex,
                config.summarizer,
                summarizer,
                args.out,
                level=args.level,
            )
        finally:
            if isinstance(summarizer, RemoteSummarizer):
                await summarizer.aclose()
            if cache is not None:
                await cache.close()
        expanded.write(Path(args.out) / MANIFEST_NAME)
        print(f"[gex] histogram {json.dumps(report.histogram, sort_keys=True)}")
        if report.summary_failures:
            print(f"[gex] extractive fallback for {len(report.summary_failures)} record(s)")
        for warning in report.warnings:
            print(f"[gex] warning: {warning}")

    asyncio.run(run())
    return 0
