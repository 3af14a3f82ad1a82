from __future__ import annotations

import logging
import os
import tempfile
from pathlib import Path

LOGGER = logging.getLogger(__name__)


def _env_keys(path: Path) -> set[str]:
    with open(path, "r", encoding="utf-8") as f:
        return {
            line.split("=")[0].strip()
            for line in f
            if "=" in line and not line.strip().startswith("#")
        }


def auto_merge_dotenv(root: str | Path | None = None) -> list[str]:
    """Append keys present in .env.example but missing from .env; returns the merged keys."""
    base = Path(root) if root is not None else Path(__file__).parent
    example_path = base / ".env.example"
    env_path = base / ".env"
    try:
        if not example_path.exists():
            return []
        if not env_path.exists():
            env_path.touch()

        missing_keys = _env_keys(example_path) - _env_keys(env_path)
        if not missing_keys:
            return []

        LOGGER.info("Auto-merging %d missing keys from .env.example into .env", len(missing_keys))
        merged: list[str] = []
        with open(env_path, "a", encoding="utf-8") as f:
            f.write("\n\n# Auto-merged from .env.example\n")
            with open(example_path, "r", encoding="utf-8") as f_example:
                for line in f_example:
                    key = line.split("=")[0].strip()
                    if key in missing_keys and not line.strip().startswith("#"):
                        f.write(line if line.endswith("\n") else f"{line}\n")
                        merged.append(key)
        return merged
    except OSError as e:
        LOGGER.warning("Could not auto-merge .env file: %s", e)
        return []


def atomic_write(path: str | Path, payload: bytes | str) -> Path:
    """Write to a sibling temp file, then os.replace it over `path`."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    data = payload.encode("utf-8") if isinstance(payload, str) else payload
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as fp:
            fp.write(data)
        os.replace(tmp_name, target)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return target
