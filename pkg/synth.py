from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from errors import UsageError
from gxt import write_array
from manifest import ClipRecord, Manifest, Provenance
from rng import generator

LOGGER = logging.getLogger(__name__)

COLORS: dict[str, tuple[int, int, int]] = {
    "red": (230, 40, 40),
    "green": (40, 200, 60),
    "blue": (40, 80, 230),
    "yellow": (235, 220, 40),
    "purple": (150, 50, 200),
    "orange": (245, 140, 30),
    "cyan": (40, 210, 220),
    "white": (245, 245, 245),
}
SHAPES = ("square", "circle", "cross", "stripe")
MOTIONS: dict[str, tuple[int, int]] = {
    "left": (0, -1),
    "right": (0, 1),
    "up": (-1, 0),
    "down": (1, 0),
}
BACKGROUND = 24
NOISE_LEVEL = 6
CLIP_SECONDS = 2.0
MANIFEST_NAME = "manifest.jsonl"
FRAMES_DIR = "frames"


@dataclass(slots=True, frozen=True)
class Pattern:
    color: str
    shape: str
    motion: str

    @property
    def caption(self) -> str:
        return f"a {self.color} {self.shape} moving {self.motion}"


def pattern_grid() -> list[Pattern]:
    return [
        Pattern(color, shape, motion)
        for color in COLORS
        for shape in SHAPES
        for motion in MOTIONS
    ]


def shape_mask(shape: str, size: int, cy: int, cx: int, radius: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    dy, dx = ys - cy, xs - cx
    if shape == "square":
        return (np.abs(dy) <= radius) & (np.abs(dx) <= radius)
    if shape == "circle":
        return dy * dy + dx * dx <= radius * radius
    if shape == "cross":
        thin = max(1, radius // 3)
        return ((np.abs(dy) <= thin) & (np.abs(dx) <= radius)) | (
            (np.abs(dx) <= thin) & (np.abs(dy) <= radius)
        )
    if shape == "stripe":
        return np.abs(dy) <= max(1, radius // 2)
    raise UsageError(f"unknown shape {shape!r}")


def render_clip(
    pattern: Pattern,
    size: int,
    frames: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """frames x size x size x 3 u8: one colored shape drifting over a noisy dark background."""
    radius = max(2, size // 6)
    dy, dx = MOTIONS[pattern.motion]
    step = max(1, size // (2 * frames))
    cy = size // 2 - dy * step * (frames // 2)
    cx = size // 2 - dx * step * (frames // 2)
    color = np.array(COLORS[pattern.color], dtype=np.int16)
    clip = np.empty((frames, size, size, 3), dtype=np.uint8)
    for t in range(frames):
        noise = rng.integers(-NOISE_LEVEL, NOISE_LEVEL + 1, size=(size, size, 3), dtype=np.int16)
        canvas = np.full((size, size, 3), BACKGROUND, dtype=np.int16) + noise
        mask = shape_mask(pattern.shape, size, cy + dy * step * t, cx + dx * step * t, radius)
        canvas[mask] = color
        clip[t] = np.clip(canvas, 0, 255).astype(np.uint8)
    return clip


def synthesize(
    out_dir: str | Path,
    *,
    pairs: int = 32,
    sources: int = 8,
    seed: int = 0,
    frame_size: int = 32,
    frames_per_clip: int = 8,
) -> Manifest:
    """SVST corpus of `pairs` clips spread evenly over `sources` sources, written with its manifest."""
    grid = pattern_grid()
    if pairs < 1 or sources < 1:
        raise UsageError("--pairs and --sources must be positive")
    if pairs % sources:
        raise UsageError(f"--pairs {pairs} must be a multiple of --sources {sources}")
    if pairs > len(grid):
        raise UsageError(f"at most {len(grid)} distinct captions are available, got --pairs {pairs}")
    if frame_size < 8 or frames_per_clip < 1:
        raise UsageError("frame size must be >= 8 and each clip needs at least one frame")

    target = Path(out_dir)
    order = generator(seed, "synth/patterns").permutation(len(grid))[:pairs]
    per_source = pairs // sources
    records: list[ClipRecord] = []
    for index, grid_index in enumerate(order):
        pattern = grid[int(grid_index)]
        source, slot = divmod(index, per_source)
        record_id = f"svst:src{source:03d}:{slot:03d}"
        clip = render_clip(
            pattern, frame_size, frames_per_clip, generator(seed, f"synth/frames/{record_id}")
        )
        relative = Path(FRAMES_DIR) / f"src{source:03d}_{slot:03d}.gxt"
        write_array(target / relative, clip)
        records.append(
            ClipRecord(
                id=record_id,
                granularity="SVST",
                source_id=f"src{source:03d}",
                t_start=slot * CLIP_SECONDS,
                t_end=(slot + 1) * CLIP_SECONDS,
                video_path=relative.as_posix(),
                image_path=None,
                text=pattern.caption,
                provenance=Provenance(),
            )
        )
    manifest = Manifest(records, base_dir=target)
    manifest.validate()
    manifest.write(target / MANIFEST_NAME)
    LOGGER.info("[synth] %d pairs over %d sources -> %s", pairs, sources, target)
    return manifest
