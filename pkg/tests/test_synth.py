from __future__ import annotations

from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from errors import UsageError
from gxt import read_array
from manifest import Manifest
from synth import MANIFEST_NAME, Pattern, pattern_grid, render_clip, shape_mask, synthesize
from rng import generator
from tests.conftest import small_corpus


def test_corpus_layout(corpus: Manifest) -> None:
    assert len(corpus) == 32
    assert Counter(record.source_id for record in corpus) == {f"src{s:03d}": 4 for s in range(8)}
    assert corpus.histogram() == {"SVST": 32}
    assert len({record.text for record in corpus}) == 32
    first = corpus.get("svst:src000:001")
    assert (first.t_start, first.t_end) == (2.0, 4.0)
    frames = read_array(corpus.resolve(first.video_path))
    assert frames.shape == (4, 16, 16, 3) and frames.dtype == np.uint8


def test_manifest_is_written(tmp_path: Path) -> None:
    manifest = small_corpus(tmp_path / "c")
    loaded = Manifest.read(tmp_path / "c" / MANIFEST_NAME)
    assert loaded.records == manifest.records


def test_same_seed_same_bytes(tmp_path: Path) -> None:
    small_corpus(tmp_path / "a", seed=5)
    small_corpus(tmp_path / "b", seed=5)
    for path in sorted((tmp_path / "a").rglob("*.*")):
        twin = tmp_path / "b" / path.relative_to(tmp_path / "a")
        assert path.read_bytes() == twin.read_bytes(), path.name
    small_corpus(tmp_path / "c", seed=6)
    texts_a = (tmp_path / "a" / MANIFEST_NAME).read_text(encoding="utf-8")
    texts_c = (tmp_path / "c" / MANIFEST_NAME).read_text(encoding="utf-8")
    assert texts_a != texts_c


def test_argument_errors(tmp_path: Path) -> None:
    with pytest.raises(UsageError):
        synthesize(tmp_path, pairs=10, sources=4)
    with pytest.raises(UsageError):
        synthesize(tmp_path, pairs=0)
    with pytest.raises(UsageError):
        synthesize(tmp_path, pairs=len(pattern_grid()) + 8, sources=8)
    with pytest.raises(UsageError):
        synthesize(tmp_path, frame_size=4)


def test_patterns_render_their_color() -> None:
    assert len(pattern_grid()) == len(set(pattern_grid())) == 128
    pattern = Pattern("red", "square", "right")
    assert pattern.caption == "a red square moving right"
    clip = render_clip(pattern, 32, 4, generator(0, "test/clip"))
    assert clip.shape == (4, 32, 32, 3)
    assert all(np.any(np.all(frame == (230, 40, 40), axis=-1)) for frame in clip)
    assert not np.array_equal(clip[0], clip[-1])
    with pytest.raises(UsageError):
        shape_mask("hexagon", 8, 4, 4, 2)
