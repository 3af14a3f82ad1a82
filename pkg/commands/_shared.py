from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Iterable

from config import RunConfig, load_run_config, progress_enabled_from_env
from errors import UsageError


def run_config(args: argparse.Namespace, flag_overrides: Iterable[str] = ()) -> RunConfig:
    """Config file, then `--set` overrides, then command flags (flags win)."""
    return load_run_config(args.config, [*args.overrides, *flag_overrides])


def progress_enabled(args: argparse.Namespace) -> bool:
    return not args.quiet and sys.stderr.isatty() and progress_enabled_from_env()


def print_rows(rows: Iterable[dict[str, Any]]) -> None:
    for row in rows:
        print(json.dumps(row, sort_keys=True))


def positive_int(raw: str) -> int:
    try:
        value = int(raw)
    except ValueError as exc:
        raise UsageError(f"expected an integer, got {raw!r}") from exc
    if value < 1:
        raise UsageError(f"expected a positive integer, got {value}")
    return value
