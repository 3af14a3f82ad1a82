from __future__ import annotations

import os
from pathlib import Path

import pytest

from utils import atomic_write, auto_merge_dotenv


def test_missing_keys_are_appended(tmp_path: Path) -> None:
    (tmp_path / ".env.example").write_text("# comment\nA=1\nB=2\nC=3", encoding="utf-8")
    (tmp_path / ".env").write_text("A=local\n", encoding="utf-8")

    assert sorted(auto_merge_dotenv(tmp_path)) == ["B", "C"]
    text = (tmp_path / ".env").read_text(encoding="utf-8")
    assert text.startswith("A=local\n")
    assert "B=2\n" in text and "C=3\n" in text
    assert "# comment" not in text
    assert auto_merge_dotenv(tmp_path) == []


def test_env_file_is_created(tmp_path: Path) -> None:
    (tmp_path / ".env.example").write_text("TOKEN=\n", encoding="utf-8")
    assert auto_merge_dotenv(tmp_path) == ["TOKEN"]
    assert (tmp_path / ".env").exists()


def test_without_example_nothing_happens(tmp_path: Path) -> None:
    assert auto_merge_dotenv(tmp_path) == []
    assert not (tmp_path / ".env").exists()


def test_atomic_write_replaces_the_target(tmp_path: Path) -> None:
    target = atomic_write(tmp_path / "nested" / "LATEST", "step_000001")
    assert target.read_text(encoding="utf-8") == "step_000001"
    atomic_write(target, b"step_000002")
    assert target.read_bytes() == b"step_000002"
    assert sorted(path.name for path in target.parent.iterdir()) == ["LATEST"]


def test_failed_atomic_write_keeps_the_old_file(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    target = atomic_write(tmp_path / "manifest.jsonl", "old\n")

    def refuse(src: str, dst: str) -> None:
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", refuse)
    with pytest.raises(OSError, match="disk full"):
        atomic_write(target, "new\n")
    assert target.read_text(encoding="utf-8") == "old\n"
    assert [path.name for path in tmp_path.iterdir()] == ["manifest.jsonl"]
