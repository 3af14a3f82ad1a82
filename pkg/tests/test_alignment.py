from __future__ import annotations

import asyncio
import json
import math
import shutil
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import tensor as tn
from alignment import (
    BatchEmbeddings,
    GexiaModel,
    Temperature,
    embed_records,
    forward_pair,
    logged_step_metrics,
    mixture,
    pair_loss,
    sample_batch,
    sim_matrix,
    train,
    train_probe,
    vtc_loss,
)
from checkpoint import LATEST_POINTER, LOCK_FILE, load_checkpoint
from client import ExtractiveSummarizer
from config import GexConfig, RunConfig, SummarizerConfig, TrainConfig
from errors import DimensionError, UsageError
from evaluation import evaluate_records
from featurizer import ClipDataset
from gex import expand
from iam import IterPolicy
from manifest import Manifest
from optim import AdamW, ParamGroup
from rng import generator
from synth import synthesize
from tensor import GradTape, Tensor, backward
from tests.conftest import OverfitRun, tiny_config


def _temperature(tau: float = 0.07) -> Temperature:
    return Temperature.initialize(tau, "f64")


def test_uniform_similarity_gives_log_batch() -> None:
    loss = vtc_loss(Tensor(np.full((4, 4), 0.3)), _temperature())
    assert abs(loss.item() - math.log(4)) < 1e-12


def test_diagonal_similarity_closed_form() -> None:
    loss = vtc_loss(Tensor(np.eye(4)), _temperature())
    expected = math.log(1 + 3 * math.exp(-1 / 0.07))
    assert abs(loss.item() - expected) < 1e-12


def test_loss_is_symmetric_under_transpose() -> None:
    sim = generator(0, "test/sim").uniform(-1, 1, size=(5, 5))
    forward = vtc_loss(Tensor(sim), _temperature()).item()
    flipped = vtc_loss(Tensor(sim.T.copy()), _temperature()).item()
    assert abs(forward - flipped) < 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_loss_ignores_a_consistent_batch_shuffle(seed: int) -> None:
    rng = generator(seed, "test/shuffle")
    sim = rng.uniform(-1, 1, size=(6, 6))
    order = rng.permutation(6)
    shuffled = sim[order][:, order]
    before = vtc_loss(Tensor(sim), _temperature()).item()
    after = vtc_loss(Tensor(shuffled.copy()), _temperature()).item()
    assert abs(before - after) < 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_raising_a_positive_pair_lowers_the_loss(seed: int) -> None:
    rng = generator(seed, "test/positive")
    sim = rng.uniform(-1, 0.5, size=(5, 5))
    index = int(rng.integers(0, 5))
    raised = sim.copy()
    raised[index, index] += 0.25
    assert vtc_loss(Tensor(raised), _temperature()).item() < vtc_loss(Tensor(sim), _temperature()).item()


def test_retrieval_argmax_does_not_depend_on_tau() -> None:
    sim = generator(0, "test/argmax").uniform(-1, 1, size=(8, 8))
    expected = np.argmax(sim, axis=1)
    for tau in (0.01, 0.07, 0.5, 2.0):
        log_probs = tn.log_softmax_rows(tn.mul(Tensor(sim), _temperature(tau).inverse()))
        assert np.array_equal(np.argmax(log_probs.data, axis=1), expected)


def test_sim_matrix_stays_in_unit_range() -> None:
    embeddings = generator(0, "test/sim-bound").normal(size=(64, 7))
    emb = BatchEmbeddings(Tensor(embeddings), Tensor(embeddings.copy()), [str(i) for i in range(64)])
    sim = sim_matrix(emb).data
    assert sim.max() <= 1.0 and sim.min() >= -1.0
    assert np.allclose(np.diag(sim), 1.0, rtol=0, atol=1e-12)


def test_loss_argument_errors() -> None:
    with pytest.raises(UsageError):
        vtc_loss(Tensor(np.ones((1, 1))), _temperature())
    with pytest.raises(DimensionError):
        vtc_loss(Tensor(np.ones((2, 3))), _temperature())
    with pytest.raises(UsageError):
        Temperature.initialize(0.0, "f64")


def test_mixture_skips_small_pools(corpus: Manifest) -> None:
    pools = corpus.by_granularity()
    pools["LVLT"] = pools["SVST"][:2]
    assert mixture(pools, TrainConfig(batch_size=4)) == {"SVST": 1.0}
    with pytest.raises(UsageError):
        mixture(pools, TrainConfig(batch_size=4, mix_weights={"LVLT": 1.0}))
    with pytest.raises(UsageError):
        mixture({"SVST": pools["SVST"][:3]}, TrainConfig(batch_size=4))


def test_sample_batch_depends_only_on_seed_and_step(corpus: Manifest) -> None:
    pools = corpus.by_granularity()
    mix = {"SVST": 1.0}
    first = sample_batch(pools, mix, 4, seed=3, step=7)
    again = sample_batch(pools, mix, 4, seed=3, step=7)
    assert [r.id for r in first[1]] == [r.id for r in again[1]]
    assert len({r.id for r in first[1]}) == 4
    batches = {tuple(r.id for r in sample_batch(pools, mix, 4, seed=3, step=s)[1]) for s in range(10)}
    assert len(batches) > 1


def test_forward_pair_rejects_mixed_granularities(corpus: Manifest) -> None:
    config = tiny_config()
    records = corpus.records[:3]
    mixed = [*records, replace(records[0], id="mixed", granularity="LVLT")]
    with pytest.raises(UsageError):
        forward_pair(
            mixed,
            IterPolicy.from_config(config.iter_policy),
            GexiaModel.initialize(config),
            ClipDataset(corpus, config.encoder),
        )


def test_embed_records_keeps_record_order(corpus: Manifest) -> None:
    config = tiny_config()
    model = GexiaModel.initialize(config)
    dataset = ClipDataset(corpus, config.encoder)
    policy = IterPolicy.from_config(config.iter_policy)
    pair = corpus.records[:2]
    video, text = embed_records(model, dataset, pair, policy)
    video_rev, text_rev = embed_records(model, dataset, pair[::-1], policy)
    assert video.shape == (2, config.iam.width)
    assert np.allclose(video, video_rev[::-1], rtol=0, atol=1e-12)
    assert np.allclose(text, text_rev[::-1], rtol=0, atol=1e-12)
    with pytest.raises(UsageError):
        embed_records(model, dataset, [], policy)


def test_train_writes_metrics_config_and_checkpoint(corpus: Manifest, tmp_path: Path) -> None:
    run_dir = tmp_path / "run"
    result = train(corpus, tiny_config(), run_dir, progress=False)

    assert result.steps == 3
    assert result.last_loss is not None and math.isfinite(result.last_loss)
    lines = [json.loads(line) for line in result.metrics_path.read_text(encoding="utf-8").splitlines()]
    assert [item["step"] for item in lines] == [1, 2, 3]
    assert {item["granularity"] for item in lines} == {"SVST"}
    assert (run_dir / "effective_config.json").exists()
    assert (run_dir / "checkpoints" / LATEST_POINTER).read_text(encoding="utf-8") == "step_000003"
    assert not (run_dir / LOCK_FILE).exists()

    ckpt = load_checkpoint(run_dir)
    assert ckpt.step == 3
    assert set(ckpt.tensors) == {name for name, _ in result.model.named_parameters()}


def test_checkpoint_reports_its_logged_step(corpus: Manifest, tmp_path: Path) -> None:
    run_dir = tmp_path / "run"
    result = train(corpus, tiny_config(), run_dir, progress=False)
    logged = logged_step_metrics(load_checkpoint(run_dir))
    assert logged is not None
    assert logged["step"] == 3
    assert logged["loss"] == result.last_loss

    copied = tmp_path / "elsewhere" / "checkpoints" / "step_000003"
    shutil.copytree(run_dir / "checkpoints" / "step_000003", copied)
    assert logged_step_metrics(load_checkpoint(copied)) is None


def test_locked_run_dir_is_refused(corpus: Manifest, tmp_path: Path) -> None:
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    (run_dir / LOCK_FILE).write_text("123", encoding="utf-8")
    with pytest.raises(UsageError):
        train(corpus, tiny_config(), run_dir, progress=False)


def test_freeze_mode_keeps_encoders_fixed(corpus: Manifest, tmp_path: Path) -> None:
    config = tiny_config(encoder_mode="freeze")
    initial = GexiaModel.initialize(config)
    trained = train(corpus, config, tmp_path / "run", progress=False).model

    for (name, before), (_, after) in zip(initial.encoder_parameters(), trained.encoder_parameters()):
        assert np.array_equal(before.data, after.data), name
    changed = [
        name
        for (name, before), (_, after) in zip(initial.other_parameters(), trained.other_parameters())
        if not np.array_equal(before.data, after.data)
    ]
    assert changed


def test_resume_is_bit_exact(corpus: Manifest, tmp_path: Path) -> None:
    config = tiny_config(steps=3, checkpoint_every=2)
    straight = train(corpus, config, tmp_path / "a", progress=False)

    resumed_dir = tmp_path / "b"
    shutil.copytree(
        tmp_path / "a" / "checkpoints" / "step_000002",
        resumed_dir / "checkpoints" / "step_000002",
    )
    (resumed_dir / "checkpoints" / LATEST_POINTER).write_text("step_000002", encoding="utf-8")
    resumed = train(corpus, config, resumed_dir, resume=True, progress=False)

    assert resumed.steps == 3
    assert resumed.last_loss == straight.last_loss
    for (name, a), (_, b) in zip(straight.model.named_parameters(), resumed.model.named_parameters()):
        assert np.array_equal(a.data, b.data), name
    lines = resumed.metrics_path.read_text(encoding="utf-8").splitlines()
    assert [json.loads(line)["step"] for line in lines] == [3]


def test_probe_separates_clusters() -> None:
    rng = generator(0, "test/probe")
    left = rng.normal(size=(20, 2)) * 0.1 + np.array([3.0, 0.0])
    right = rng.normal(size=(20, 2)) * 0.1 + np.array([-3.0, 0.0])
    embeddings = np.concatenate([left, right])
    labels = np.array([0] * 20 + [1] * 20)

    result = train_probe(embeddings, labels, 2, steps=200, lr=0.05)
    assert result.accuracy == 1.0
    assert result.losses[-1] < result.losses[0]
    assert result.predict(np.array([[2.5, 0.0], [-2.5, 0.0]])).tolist() == [0, 1]


def test_probe_argument_errors() -> None:
    with pytest.raises(UsageError):
        train_probe(np.ones((3, 2)), [0, 0, 0], 1)
    with pytest.raises(UsageError):
        train_probe(np.ones((3, 2)), [0, 1, 2], 2)
    with pytest.raises(DimensionError):
        train_probe(np.ones((3, 2)), [0, 1], 2)


@pytest.mark.slow
def test_fixed_batch_loss_goes_down(corpus: Manifest) -> None:
    config = tiny_config()
    model = GexiaModel.initialize(config)
    dataset = ClipDataset(corpus, config.encoder)
    records = corpus.records[:4]
    frames, tokens = dataset.batch(records)
    ids = [record.id for record in records]
    optimizer = AdamW([ParamGroup("all", list(model.named_parameters()), lr=1e-2)])

    losses = []
    for _ in range(100):
        optimizer.zero_grad()
        with GradTape() as tape:
            _, loss = pair_loss(model, frames, tokens, (1, 1), ids)
        backward(loss, tape)
        optimizer.step()
        losses.append(loss.item())
    assert losses[-1] < losses[0]


@pytest.mark.slow
def test_default_training_overfits_the_synthetic_corpus(overfit_run: OverfitRun) -> None:
    config = overfit_run.config
    dataset = ClipDataset(overfit_run.manifest, config.encoder)
    policy = IterPolicy.from_config(config.iter_policy)
    reports = evaluate_records(overfit_run.model, dataset, overfit_run.manifest.records, policy)
    for direction in ("T2V", "V2T"):
        assert reports[direction].r1 == 1.0, direction
        assert reports[direction].mdr == 1.0, direction


def _expanded(root: Path, seed: int) -> Manifest:
    corpus = synthesize(root / "corpus", seed=seed)
    expanded, _ = asyncio.run(
        expand(corpus, GexConfig(), SummarizerConfig(), ExtractiveSummarizer(20), root / "gex")
    )
    return expanded


@pytest.mark.slow
def test_mixed_granularities_help_long_video_retrieval(tmp_path: Path) -> None:
    with_mixture: list[float] = []
    svst_only: list[float] = []
    for seed in range(3):
        train_set = _expanded(tmp_path / f"train{seed}", seed)
        held_out = _expanded(tmp_path / f"held{seed}", seed + 100).filter("LVLT")
        assert len(held_out) == 8
        config = RunConfig(seed=seed, train=TrainConfig(batch_size=8, steps=400, checkpoint_every=0))
        policy = IterPolicy.from_config(config.iter_policy)
        dataset = ClipDataset(held_out, config.encoder)
        for manifest, scores in ((train_set, with_mixture), (train_set.filter("SVST"), svst_only)):
            model = train(manifest, config, tmp_path / f"run{seed}-{len(manifest)}", progress=False).model
            scores.append(evaluate_records(model, dataset, held_out.records, policy)["T2V"].r1)
    assert np.median(with_mixture) >= np.median(svst_only)
