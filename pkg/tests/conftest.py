from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pytest

from alignment import GexiaModel, train
from config import EncoderConfig, IamConfig, RunConfig, TrainConfig
from manifest import Manifest
from synth import synthesize

GEXIA_ENV = (
    "GEXIA_SUMMARIZER_TOKEN",
    "GEXIA_SUMMARIZER_ENDPOINT",
    "GEXIA_SUMMARIZER_MODEL",
    "GEXIA_SUMMARIZER_PROVIDER",
    "GEXIA_LOG_LEVEL",
    "GEXIA_PROGRESS",
)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch: pytest.MonkeyPatch) -> None:
    for name in GEXIA_ENV:
        monkeypatch.delenv(name, raising=False)


def tiny_config(**train: object) -> RunConfig:
    """16x16 frames, 2-4 frames per clip, N=4, D=8; f64 so runs are bit-reproducible."""
    settings: dict[str, object] = {"batch_size": 4, "steps": 3, "checkpoint_every": 0}
    settings.update(train)
    return RunConfig(
        seed=0,
        dtype="f64",
        encoder=EncoderConfig(
            frame_h=16, frame_w=16, patch_size=8, c_v=8, c_t=8, m=32, d_short=2, d_long=4
        ),
        iam=IamConfig(n_latents=4, width=8),
        train=TrainConfig(**settings),  # type: ignore[arg-type]
    )


def small_corpus(out_dir: Path, *, pairs: int = 32, sources: int = 8, seed: int = 0) -> Manifest:
    return synthesize(out_dir, pairs=pairs, sources=sources, seed=seed, frame_size=16, frames_per_clip=4)


@pytest.fixture
def corpus(tmp_path: Path) -> Manifest:
    return small_corpus(tmp_path / "corpus")


@dataclass(slots=True)
class OverfitRun:
    manifest: Manifest
    config: RunConfig
    model: GexiaModel
    run_dir: Path


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory: pytest.TempPathFactory) -> OverfitRun:
    """32 synthetic SVST pairs trained with the default config (2000 steps)."""
    root = tmp_path_factory.mktemp("overfit")
    manifest = synthesize(root / "corpus")
    config = RunConfig()
    result = train(manifest, config, root / "run", progress=False)
    return OverfitRun(manifest=manifest, config=config, model=result.model, run_dir=root / "run")
