from __future__ import annotations

import argparse
import importlib
import logging
import sys
from pathlib import Path
from typing import NoReturn, Sequence

from config import log_level_from_env
from errors import DataFormatError, GexiaError, UsageError, format_diagnostic
from utils import auto_merge_dotenv

LOGGER = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class GexiaArgumentParser(argparse.ArgumentParser):
    """argparse usage errors become UsageError so they share the diagnostic format."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def load_commands(subparsers: argparse._SubParsersAction) -> list[str]:
    """Import every `commands/<name>.py` plugin in name order and let it register itself."""
    loaded: list[str] = []
    commands_dir = Path(__file__).parent / "commands"
    for file in sorted(commands_dir.glob("*.py")):
        if file.name.startswith("_"):
            continue
        module = importlib.import_module(f"commands.{file.stem}")
        module.register(subparsers)
        loaded.append(file.stem)
    return loaded


def build_parser() -> GexiaArgumentParser:
    parser = GexiaArgumentParser(
        prog="gexia",
        description="Multi-grained video-text alignment: synthesize, expand, pretrain, evaluate.",
    )
    parser.add_argument("--config", default=None, help="JSON run config (defaults fill gaps)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--quiet", action="store_true", help="hide progress bars and info logs")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted config override, e.g. train.steps=200 (repeatable)",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    load_commands(subparsers)
    return parser


def configure_logging(level: str | None, quiet: bool) -> None:
    resolved = (level or log_level_from_env()).upper()
    if resolved not in {"DEBUG", "INFO", "WARNING", "ERROR"}:
        raise UsageError(f"--log-level must be DEBUG, INFO, WARNING or ERROR, got {level!r}")
    if quiet and resolved in {"DEBUG", "INFO"}:
        resolved = "WARNING"
    logging.basicConfig(level=getattr(logging, resolved), format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        configure_logging(args.log_level, args.quiet)
        return int(args.handler(args) or 0)
    except GexiaError as exc:
        print(format_diagnostic(exc), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        error = DataFormatError(str(exc))
        print(format_diagnostic(error), file=sys.stderr)
        return error.exit_code
    except KeyboardInterrupt:
        print("gexia-error[interrupted]: stopped by user", file=sys.stderr)
        return 130


if __name__ == "__main__":
    auto_merge_dotenv()
    sys.exit(main())
