from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from tqdm import tqdm

import tensor as tn
from checkpoint import Checkpoint, RunLock, load_checkpoint, save_checkpoint
from config import EncoderConfig, RunConfig, TrainConfig, echo_run_config
from errors import DimensionError, NumericError, UsageError
from featurizer import ClipDataset, TextEncoderParams, VideoEncoderParams, encode_text, encode_video, tokenize
from iam import DEFAULT_HOOKS, IamHooks, IamParams, IterPolicy, iam_forward, pool_latents
from logger.metrics_logger import MetricsLogger
from manifest import ClipRecord, Manifest
from optim import AdamW, ParamGroup, build_schedule
from params import ParamSet
from rng import generator
from tensor import GradTape, Tensor, backward, no_tape, resolve_dtype

LOGGER = logging.getLogger(__name__)

ENCODER_PREFIXES = ("video_encoder.", "text_encoder.")
EMBED_BATCH = 64
METRICS_FILE = "metrics.jsonl"


@dataclass(slots=True)
class Temperature(ParamSet):
    log_tau: Tensor

    @classmethod
    def initialize(cls, tau: float, dtype: Any) -> Temperature:
        if tau <= 0:
            raise UsageError(f"temperature must be positive, got {tau}")
        return cls(
            log_tau=Tensor(
                [math.log(tau)], dtype=resolve_dtype(dtype), requires_grad=True, name="log_tau"
            )
        )

    @property
    def tau(self) -> float:
        return math.exp(self.log_tau.item())

    def inverse(self) -> Tensor:
        """1/tau as a differentiable (1,) tensor."""
        return tn.exp(tn.neg(self.log_tau))


@dataclass(slots=True)
class GexiaModel(ParamSet):
    """Both toy encoders, both IAMs and the shared temperature."""

    video_encoder: VideoEncoderParams
    text_encoder: TextEncoderParams
    iam_video: IamParams
    iam_text: IamParams
    temperature: Temperature
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    @classmethod
    def initialize(cls, config: RunConfig) -> GexiaModel:
        enc = config.encoder
        seed, dtype = config.seed, config.dtype
        return cls(
            video_encoder=VideoEncoderParams.initialize(enc, seed, dtype),
            text_encoder=TextEncoderParams.initialize(enc, seed, dtype),
            iam_video=IamParams.initialize(config.iam, enc.c_v, seed, dtype, "iam_video."),
            iam_text=IamParams.initialize(config.iam, enc.c_t, seed, dtype, "iam_text."),
            temperature=Temperature.initialize(config.train.temperature_init, dtype),
            encoder=enc,
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> GexiaModel:
        model = cls.initialize(ckpt.config)
        model.load_arrays(ckpt.tensors)
        return model

    def encoder_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.named_parameters() if n.startswith(ENCODER_PREFIXES)]

    def other_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.named_parameters() if not n.startswith(ENCODER_PREFIXES)]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.named_parameters()}


@dataclass(slots=True)
class BatchEmbeddings:
    video: Tensor
    text: Tensor
    pair_ids: list[str]

    def __post_init__(self) -> None:
        if self.video.ndim != 2 or self.video.shape != self.text.shape:
            raise DimensionError(
                f"embeddings must both be B x D, got {self.video.shape} and {self.text.shape}"
            )
        if len(self.pair_ids) != self.video.shape[0]:
            raise DimensionError("pair_ids length must match the batch size")


def sim_matrix(emb: BatchEmbeddings) -> Tensor:
    """S[i, j] = cos(video_i, text_j)."""
    video = tn.normalize_rows(emb.video)
    text = tn.normalize_rows(emb.text)
    return tn.clamp_unit(tn.matmul(video, tn.transpose(text)))


def vtc_terms(sim: Tensor, temperature: Temperature) -> tuple[Tensor, Tensor]:
    """(L_v2t, L_t2v): mean -log softmax(S / tau) at the diagonal, over rows then columns."""
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise DimensionError(f"similarity matrix must be square, got {sim.shape}")
    size = sim.shape[0]
    if size < 2:
        raise UsageError("the contrastive loss needs a batch of at least 2 pairs")
    logits = tn.mul(sim, temperature.inverse())
    diagonal = np.arange(size)
    v2t = tn.neg(tn.mean(tn.pick(tn.log_softmax_rows(logits), diagonal)))
    t2v = tn.neg(tn.mean(tn.pick(tn.log_softmax_rows(tn.transpose(logits)), diagonal)))
    return v2t, t2v


def vtc_loss(sim: Tensor, temperature: Temperature) -> Tensor:
    v2t, t2v = vtc_terms(sim, temperature)
    return tn.mul(tn.add(v2t, t2v), 0.5)


def embed_video(
    model: GexiaModel,
    frames: np.ndarray,
    iters: int,
    hooks: IamHooks = DEFAULT_HOOKS,
) -> Tensor:
    """(B x d x H x W x 3) or (d x H x W x 3) frames -> pooled embeddings (B x D or D)."""
    feature = encode_video(frames, model.encoder, model.video_encoder)
    return pool_latents(iam_forward(feature, model.iam_video, iters, hooks))


def embed_tokens(
    model: GexiaModel,
    tokens: np.ndarray,
    iters: int,
    hooks: IamHooks = DEFAULT_HOOKS,
) -> Tensor:
    feature = encode_text(tokens, model.encoder, model.text_encoder)
    return pool_latents(iam_forward(feature, model.iam_text, iters, hooks))


def embed_texts(model: GexiaModel, texts: Sequence[str], iters: int) -> np.ndarray:
    """Pooled text embeddings (len(texts) x D) without recording a tape."""
    if not texts:
        raise UsageError("no texts to embed")
    outputs: list[np.ndarray] = []
    with no_tape():
        for start in range(0, len(texts), EMBED_BATCH):
            chunk = texts[start : start + EMBED_BATCH]
            tokens = np.stack([tokenize(text, model.encoder)[0] for text in chunk])
            outputs.append(embed_tokens(model, tokens, iters).data)
    return np.concatenate(outputs, axis=0)


def _single_granularity(records: Sequence[ClipRecord]) -> str:
    labels = {record.granularity for record in records}
    if len(labels) != 1:
        raise UsageError(f"a batch must hold one granularity, got {sorted(labels)}")
    return labels.pop()


def forward_pair(
    records: Sequence[ClipRecord],
    policy: IterPolicy,
    model: GexiaModel,
    dataset: ClipDataset,
    hooks: IamHooks = DEFAULT_HOOKS,
) -> tuple[BatchEmbeddings, Tensor]:
    """Encode -> IAM with the granularity's (video_iters, text_iters) -> pool -> S -> VTC loss."""
    granularity = _single_granularity(records)
    frames, tokens = dataset.batch(records)
    return pair_loss(
        model,
        frames,
        tokens,
        policy.iters_for(granularity),
        [record.id for record in records],
        hooks,
    )


def pair_loss(
    model: GexiaModel,
    frames: np.ndarray,
    tokens: np.ndarray,
    iters: tuple[int, int],
    pair_ids: list[str],
    hooks: IamHooks = DEFAULT_HOOKS,
) -> tuple[BatchEmbeddings, Tensor]:
    emb = BatchEmbeddings(
        video=embed_video(model, frames, iters[0], hooks),
        text=embed_tokens(model, tokens, iters[1], hooks),
        pair_ids=pair_ids,
    )
    return emb, vtc_loss(sim_matrix(emb), model.temperature)


def embed_records(
    model: GexiaModel,
    dataset: ClipDataset,
    records: Sequence[ClipRecord],
    policy: IterPolicy,
    iters: tuple[int, int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(video B x D, text B x D) in record order; `iters` overrides the policy for every record."""
    if not records:
        raise UsageError("no records to embed")
    width = model.iam_video.d
    video = np.zeros((len(records), width), dtype=model.temperature.log_tau.dtype)
    text = np.zeros_like(video)
    positions: dict[str, list[int]] = {}
    for idx, record in enumerate(records):
        positions.setdefault(record.granularity, []).append(idx)

    with no_tape():
        for granularity, indices in positions.items():
            video_iters, text_iters = iters if iters is not None else policy.iters_for(granularity)
            for start in range(0, len(indices), EMBED_BATCH):
                chunk = indices[start : start + EMBED_BATCH]
                frames, tokens = dataset.batch([records[i] for i in chunk])
                video[chunk] = embed_video(model, frames, video_iters).data
                text[chunk] = embed_tokens(model, tokens, text_iters).data
    return video, text


def classify_head(embedding: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine logits: (D,) -> (K,) or (B x D) -> (B x K)."""
    if weight.ndim != 2 or embedding.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"head {weight.shape}/{bias.shape} does not fit embedding {embedding.shape}"
        )
    if embedding.ndim == 1:
        rows = tn.reshape(embedding, (1, embedding.shape[0]))
        return tn.reshape(tn.add(tn.matmul(rows, weight), bias), (weight.shape[1],))
    return tn.add(tn.matmul(embedding, weight), bias)


@dataclass(slots=True)
class ProbeResult:
    weight: Tensor
    bias: Tensor
    accuracy: float
    losses: list[float]

    def predict(self, embeddings: np.ndarray) -> np.ndarray:
        with no_tape():
            logits = classify_head(Tensor(embeddings, dtype=self.weight.dtype), self.weight, self.bias)
        return np.argmax(logits.data, axis=-1)


def train_probe(
    embeddings: np.ndarray,
    labels: Sequence[int] | np.ndarray,
    num_classes: int,
    *,
    steps: int = 300,
    lr: float = 0.05,
    seed: int = 0,
    dtype: Any = "f64",
) -> ProbeResult:
    """Linear softmax classifier on frozen embeddings, trained full-batch with AdamW."""
    features = np.asarray(embeddings)
    targets = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or targets.shape != (features.shape[0],):
        raise DimensionError(
            f"probe needs B x D embeddings and B labels, got {features.shape} and {targets.shape}"
        )
    if num_classes < 2 or targets.min() < 0 or targets.max() >= num_classes:
        raise UsageError(f"probe labels must lie in 0..{num_classes - 1} with K >= 2")

    resolved = resolve_dtype(dtype)
    width = features.shape[1]
    scale = 1.0 / math.sqrt(width)
    weight = Tensor(
        generator(seed, "probe/weight").normal(0.0, 0.01 * scale, size=(width, num_classes)),
        dtype=resolved,
        requires_grad=True,
        name="probe.weight",
    )
    bias = Tensor(np.zeros(num_classes), dtype=resolved, requires_grad=True, name="probe.bias")
    inputs = Tensor(features, dtype=resolved)
    optimizer = AdamW([ParamGroup("probe", [("probe.weight", weight), ("probe.bias", bias)], lr=lr)])

    losses: list[float] = []
    for _ in range(steps):
        optimizer.zero_grad()
        with GradTape() as tape:
            logits = classify_head(inputs, weight, bias)
            loss = tn.neg(tn.mean(tn.pick(tn.log_softmax_rows(logits), targets)))
        backward(loss, tape)
        optimizer.step()
        losses.append(loss.item())

    result = ProbeResult(weight=weight, bias=bias, accuracy=0.0, losses=losses)
    result.accuracy = float(np.mean(result.predict(features) == targets))
    return result


@dataclass(slots=True)
class TrainResult:
    model: GexiaModel
    checkpoint: Path
    steps: int
    last_loss: float | None
    metrics_path: Path


def build_optimizer(model: GexiaModel, train_cfg: TrainConfig) -> AdamW:
    groups = [
        ParamGroup(
            "encoders",
            model.encoder_parameters(),
            lr=train_cfg.effective_lr_encoders(),
            weight_decay=train_cfg.weight_decay,
        ),
        ParamGroup(
            "other",
            model.other_parameters(),
            lr=train_cfg.lr_other,
            weight_decay=train_cfg.weight_decay,
        ),
    ]
    schedule = build_schedule(train_cfg.schedule, max(train_cfg.steps, 1), train_cfg.min_lr)
    return AdamW(groups, schedule=schedule)


def mixture(pools: dict[str, list[ClipRecord]], train_cfg: TrainConfig) -> dict[str, float]:
    """Normalized sampling weights per granularity.

    Explicit weights must be backed by >= batch_size records; the default (pool
    proportions) skips granularities too small to fill a batch.
    """
    size = train_cfg.batch_size
    if train_cfg.mix_weights:
        weights = {label: w for label, w in train_cfg.mix_weights.items() if w > 0}
        for label in weights:
            available = len(pools.get(label, []))
            if available < size:
                raise UsageError(
                    f"granularity {label} has {available} records, fewer than batch_size {size}"
                )
    else:
        weights = {}
        for label, pool in pools.items():
            if len(pool) >= size:
                weights[label] = float(len(pool))
            else:
                LOGGER.warning(
                    "[train] skipping %s: %d records cannot fill a batch of %d", label, len(pool), size
                )
    total = sum(weights.values())
    if total <= 0:
        raise UsageError(f"no granularity has at least batch_size={size} records")
    return {label: weights[label] / total for label in sorted(weights)}


def sample_batch(
    pools: dict[str, list[ClipRecord]],
    mix: dict[str, float],
    batch_size: int,
    seed: int,
    step: int,
) -> tuple[str, list[ClipRecord]]:
    """Batch for a step depends only on (seed, step), so resumed runs see the same data."""
    rng = generator(seed, f"train/batch/{step}")
    labels = list(mix)
    label = labels[int(rng.choice(len(labels), p=[mix[name] for name in labels]))]
    pool = pools[label]
    picks = rng.choice(len(pool), size=batch_size, replace=False)
    return label, [pool[int(idx)] for idx in picks]


def train(
    manifest: Manifest,
    config: RunConfig,
    run_dir: str | Path | None = None,
    *,
    resume: bool = False,
    progress: bool = True,
    hooks: IamHooks = DEFAULT_HOOKS,
) -> TrainResult:
    if len(manifest) == 0:
        raise UsageError("cannot train on an empty manifest")
    train_cfg = config.train
    out_dir = Path(run_dir or config.run_dir)
    pools = manifest.by_granularity()
    mix = mixture(pools, train_cfg)
    policy = IterPolicy.from_config(config.iter_policy)
    policy.require(set(mix))
    dataset = ClipDataset(manifest, config.encoder)

    model = GexiaModel.initialize(config)
    optimizer = build_optimizer(model, train_cfg)
    metrics = MetricsLogger(out_dir / METRICS_FILE)
    start = 0
    last_loss: float | None = None
    checkpoint_path: Path | None = None

    with RunLock(out_dir):
        if resume:
            ckpt = load_checkpoint(out_dir)
            model.load_arrays(ckpt.tensors)
            if ckpt.optimizer is not None:
                optimizer.load_named_state(ckpt.optimizer, ckpt.step)
            else:
                optimizer.state.step = ckpt.step
            start = ckpt.step
            checkpoint_path = ckpt.path
            LOGGER.info("[train] resuming from %s at step %d", ckpt.path, start)
        metrics.initialize(keep_through=start)
        echo_run_config(config, out_dir)

        LOGGER.info(
            "[train] %d parameters, mix=%s, steps=%d",
            model.parameter_count(),
            {label: round(weight, 3) for label, weight in mix.items()},
            train_cfg.steps,
        )
        steps = tqdm(
            range(start, train_cfg.steps),
            initial=start,
            total=train_cfg.steps,
            desc="[train]",
            disable=not progress,
        )
        for step in steps:
            granularity, records = sample_batch(pools, mix, train_cfg.batch_size, config.seed, step)
            optimizer.zero_grad()
            try:
                with GradTape() as tape:
                    _, loss = forward_pair(records, policy, model, dataset, hooks)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError("loss is not finite")
                backward(loss, tape)
                lrs = optimizer.step()
            except NumericError as exc:
                raise NumericError(f"training aborted at step {step + 1} ({granularity}): {exc}") from exc

            last_loss = value
            metrics.log_step(
                step=step + 1,
                granularity=granularity,
                loss=value,
                tau=model.temperature.tau,
                lr_other=lrs["other"],
                lr_encoders=lrs["encoders"],
            )
            steps.set_postfix(loss=f"{value:.4f}", g=granularity)
            done = step + 1
            if train_cfg.checkpoint_every and done % train_cfg.checkpoint_every == 0 and done < train_cfg.steps:
                save_checkpoint(
                    out_dir,
                    step=done,
                    config=config,
                    named_tensors=model.named_parameters(),
                    optimizer_state=optimizer.named_state(),
                )

        if checkpoint_path is None or start < train_cfg.steps:
            checkpoint_path = save_checkpoint(
                out_dir,
                step=max(train_cfg.steps, start),
                config=config,
                named_tensors=model.named_parameters(),
                optimizer_state=optimizer.named_state(),
            )

    LOGGER.info("[train] finished at step %d (last loss %s)", max(train_cfg.steps, start), last_loss)
    return TrainResult(
        model=model,
        checkpoint=checkpoint_path,
        steps=max(train_cfg.steps, start),
        last_loss=last_loss,
        metrics_path=metrics.log_path,
    )


def load_model(path: str | Path) -> GexiaModel:
    return GexiaModel.from_checkpoint(load_checkpoint(path, with_optimizer=False))


def logged_step_metrics(ckpt: Checkpoint) -> dict[str, Any] | None:
    """The metrics line recorded for the checkpoint's step, if its run kept one."""
    metrics_path = ckpt.path.parent.parent / METRICS_FILE
    if not metrics_path.exists():
        return None
    return MetricsLogger(metrics_path).get_by_step(ckpt.step)
