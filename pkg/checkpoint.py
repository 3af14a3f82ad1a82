from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from config import RunConfig, run_config_from_dict
from errors import DataFormatError, UsageError
from gxt import read_array, write_array
from tensor import Tensor
from utils import atomic_write

LOGGER = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
CHECKPOINTS_DIR = "checkpoints"
LATEST_POINTER = "LATEST"
META_FILE = "meta.json"
LOCK_FILE = ".lock"


@dataclass(slots=True)
class Checkpoint:
    path: Path
    step: int
    config: RunConfig
    tensors: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] | None


class RunLock:
    """Exclusive writer lock on a run directory (`.lock`, created with O_EXCL)."""

    def __init__(self, run_dir: str | Path):
        self.path = Path(run_dir) / LOCK_FILE
        self._held = False

    def __enter__(self) -> RunLock:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            raise UsageError(
                f"{self.path.parent} is locked by another writer (remove {self.path} if stale)"
            ) from exc
        with os.fdopen(fd, "w", encoding="utf-8") as fp:
            fp.write(str(os.getpid()))
        self._held = True
        return self

    def __exit__(self, *exc_info: object) -> None:
        if self._held:
            self.path.unlink(missing_ok=True)
            self._held = False


def _tensor_file(root: Path, name: str) -> Path:
    return root / f"{name}.gxt"


def save_checkpoint(
    run_dir: str | Path,
    *,
    step: int,
    config: RunConfig,
    named_tensors: Iterable[tuple[str, Tensor]],
    optimizer_state: dict[str, np.ndarray] | None = None,
) -> Path:
    """Write `checkpoints/step_XXXXXX/` and point `checkpoints/LATEST` at it."""
    root = Path(run_dir) / CHECKPOINTS_DIR
    target = root / f"step_{step:06d}"
    names: list[str] = []
    for name, tensor in named_tensors:
        write_array(_tensor_file(target / "params", name), tensor.data)
        names.append(name)
    optimizer_names: list[str] = []
    for name, array in (optimizer_state or {}).items():
        write_array(_tensor_file(target / "optim", name), array)
        optimizer_names.append(name)

    meta = {
        "format": CHECKPOINT_FORMAT,
        "step": step,
        "dtype": config.dtype,
        "tensors": names,
        "optimizer_tensors": optimizer_names,
        "config": config.to_dict(),
    }
    atomic_write(target / META_FILE, json.dumps(meta, indent=2, sort_keys=True))
    atomic_write(root / LATEST_POINTER, target.name)
    LOGGER.info("[checkpoint] step %d -> %s", step, target)
    return target


def resolve_checkpoint_dir(path: str | Path) -> Path:
    """Accept a step directory, a `checkpoints/` directory, or a run directory."""
    candidate = Path(path)
    if (candidate / META_FILE).exists():
        return candidate
    for root in (candidate, candidate / CHECKPOINTS_DIR):
        pointer = root / LATEST_POINTER
        if pointer.exists():
            resolved = root / pointer.read_text(encoding="utf-8").strip()
            if (resolved / META_FILE).exists():
                return resolved
    raise DataFormatError(f"no checkpoint found at {candidate}")


def has_checkpoint(run_dir: str | Path) -> bool:
    try:
        resolve_checkpoint_dir(run_dir)
    except DataFormatError:
        return False
    return True


def load_checkpoint(path: str | Path, *, with_optimizer: bool = True) -> Checkpoint:
    directory = resolve_checkpoint_dir(path)
    try:
        meta: dict[str, Any] = json.loads((directory / META_FILE).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{directory / META_FILE}: invalid JSON ({exc.msg})") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise DataFormatError(f"{directory}: unsupported checkpoint format {meta.get('format')!r}")

    config = run_config_from_dict(meta["config"])
    tensors = {
        name: read_array(_tensor_file(directory / "params", name)) for name in meta["tensors"]
    }
    optimizer = None
    if with_optimizer and meta.get("optimizer_tensors"):
        optimizer = {
            name: read_array(_tensor_file(directory / "optim", name))
            for name in meta["optimizer_tensors"]
        }
    return Checkpoint(
        path=directory,
        step=int(meta["step"]),
        config=config,
        tensors=tensors,
        optimizer=optimizer,
    )
