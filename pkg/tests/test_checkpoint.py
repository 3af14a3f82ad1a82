from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from checkpoint import (
    CHECKPOINTS_DIR,
    LATEST_POINTER,
    LOCK_FILE,
    META_FILE,
    RunLock,
    has_checkpoint,
    load_checkpoint,
    resolve_checkpoint_dir,
    save_checkpoint,
)
from errors import DataFormatError, UsageError
from tensor import Tensor
from tests.conftest import tiny_config


def _save(run_dir: Path, step: int, scale: float = 1.0) -> Path:
    tensors = [
        ("weights", Tensor(np.arange(6.0).reshape(2, 3) * scale)),
        ("bias", Tensor(np.array([0.5, -0.5]) * scale)),
    ]
    optimizer = {"m/weights": np.ones((2, 3)), "v/weights": np.full((2, 3), 2.0)}
    return save_checkpoint(run_dir, step=step, config=tiny_config(), named_tensors=tensors, optimizer_state=optimizer)


def test_save_then_load(tmp_path: Path) -> None:
    target = _save(tmp_path, 5)
    assert target == tmp_path / CHECKPOINTS_DIR / "step_000005"
    assert (target / "params" / "weights.gxt").exists()
    assert (target / "optim" / "m" / "weights.gxt").exists()

    ckpt = load_checkpoint(tmp_path)
    assert ckpt.step == 5
    assert ckpt.config == tiny_config()
    assert list(ckpt.tensors) == ["weights", "bias"]
    assert np.array_equal(ckpt.tensors["weights"], np.arange(6.0).reshape(2, 3))
    assert ckpt.optimizer is not None
    assert np.array_equal(ckpt.optimizer["v/weights"], np.full((2, 3), 2.0))
    assert load_checkpoint(tmp_path, with_optimizer=False).optimizer is None


def test_latest_follows_the_newest_save(tmp_path: Path) -> None:
    _save(tmp_path, 2)
    _save(tmp_path, 4, scale=3.0)
    assert (tmp_path / CHECKPOINTS_DIR / LATEST_POINTER).read_text(encoding="utf-8") == "step_000004"
    assert load_checkpoint(tmp_path).tensors["bias"].tolist() == [1.5, -1.5]
    assert load_checkpoint(tmp_path / CHECKPOINTS_DIR / "step_000002").step == 2


def test_resolve_accepts_three_locations(tmp_path: Path) -> None:
    step_dir = _save(tmp_path, 1)
    assert resolve_checkpoint_dir(tmp_path) == step_dir
    assert resolve_checkpoint_dir(tmp_path / CHECKPOINTS_DIR) == step_dir
    assert resolve_checkpoint_dir(step_dir) == step_dir


def test_missing_checkpoint(tmp_path: Path) -> None:
    assert not has_checkpoint(tmp_path)
    with pytest.raises(DataFormatError):
        load_checkpoint(tmp_path)
    _save(tmp_path, 1)
    assert has_checkpoint(tmp_path)


def test_unknown_format_is_rejected(tmp_path: Path) -> None:
    step_dir = _save(tmp_path, 1)
    meta = json.loads((step_dir / META_FILE).read_text(encoding="utf-8"))
    meta["format"] = 99
    (step_dir / META_FILE).write_text(json.dumps(meta), encoding="utf-8")
    with pytest.raises(DataFormatError):
        load_checkpoint(step_dir)

    (step_dir / META_FILE).write_text("{not json", encoding="utf-8")
    with pytest.raises(DataFormatError):
        load_checkpoint(step_dir)


def test_run_lock_is_exclusive(tmp_path: Path) -> None:
    with RunLock(tmp_path / "run") as lock:
        assert lock.path == tmp_path / "run" / LOCK_FILE
        assert lock.path.exists()
        with pytest.raises(UsageError):
            with RunLock(tmp_path / "run"):
                pass
    assert not (tmp_path / "run" / LOCK_FILE).exists()
    with RunLock(tmp_path / "run"):
        pass
