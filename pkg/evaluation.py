from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Sequence

import cv2
import numpy as np
from sklearn.metrics import average_precision_score

from alignment import GexiaModel, embed_records, embed_texts, embed_video
from errors import DegenerateInputError, DimensionError, UsageError
from featurizer import ClipDataset, load_visual
from gxt import write_array
from iam import IterPolicy
from manifest import ClipRecord, Manifest
from tensor import no_tape

LOGGER = logging.getLogger(__name__)

RECALL_KS = (1, 5, 10)
ZERO_SHOT_TEMPLATE = "A video of a {label}."
HEATMAP_BATCH = 32


@dataclass(slots=True, frozen=True)
class RetrievalReport:
    direction: str
    r1: float
    r5: float
    r10: float
    mdr: float
    mnr: float
    n_queries: int
    tie_break: str = "candidate-index"

    def to_row(self) -> dict[str, Any]:
        return asdict(self)


def _unit_rows(embeddings: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(embeddings, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateInputError(f"{what} has a zero-norm embedding")
    return embeddings / norms


def cosine_matrix(video: np.ndarray, text: np.ndarray) -> np.ndarray:
    """S[i, j] = cos(video_i, text_j) for plain arrays."""
    sim = _unit_rows(np.asarray(video), "video") @ _unit_rows(np.asarray(text), "text").T
    return np.clip(sim, -1.0, 1.0)


def ranks_of(sim: np.ndarray, ground_truth: Sequence[int] | np.ndarray) -> np.ndarray:
    """1 + #strictly better candidates + #equal candidates with a lower index."""
    scores = np.asarray(sim)
    truth = np.asarray(ground_truth, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise UsageError("retrieval needs a non-empty Q x C similarity matrix")
    if truth.shape != (scores.shape[0],) or truth.min() < 0 or truth.max() >= scores.shape[1]:
        raise DimensionError("ground truth must give one candidate index per query")
    target = scores[np.arange(scores.shape[0]), truth][:, None]
    better = (scores > target).sum(axis=1)
    columns = np.arange(scores.shape[1])[None, :]
    tied_before = ((scores == target) & (columns < truth[:, None])).sum(axis=1)
    return 1 + better + tied_before


def retrieve(
    sim: np.ndarray,
    ground_truth: Sequence[int] | np.ndarray,
    direction: str = "T2V",
) -> RetrievalReport:
    ranks = ranks_of(sim, ground_truth)
    recall = {k: float(np.mean(ranks <= k)) for k in RECALL_KS}
    return RetrievalReport(
        direction=direction,
        r1=recall[1],
        r5=recall[5],
        r10=recall[10],
        mdr=float(np.median(ranks)),
        mnr=float(np.mean(ranks)),
        n_queries=int(ranks.size),
    )


def paired_reports(video: np.ndarray, text: np.ndarray) -> dict[str, RetrievalReport]:
    """T2V and V2T over index-paired embeddings (the diagonal is ground truth)."""
    sim = cosine_matrix(video, text)
    truth = np.arange(sim.shape[0])
    return {
        "T2V": retrieve(sim.T, truth, "T2V"),
        "V2T": retrieve(sim, truth, "V2T"),
    }


def evaluate_records(
    model: GexiaModel,
    dataset: ClipDataset,
    records: Sequence[ClipRecord],
    policy: IterPolicy,
    iters: tuple[int, int] | None = None,
) -> dict[str, RetrievalReport]:
    video, text = embed_records(model, dataset, records, policy, iters)
    return paired_reports(video, text)


def ablation_sweep(
    model: GexiaModel,
    dataset: ClipDataset,
    records: Sequence[ClipRecord],
    policy: IterPolicy,
    settings: Sequence[tuple[int, int]],
) -> list[dict[str, Any]]:
    """One T2V and one V2T report per inference (video_iters, text_iters) setting."""
    labels = {record.granularity for record in records}
    if len(labels) > 1:
        raise UsageError(f"ablation sweeps run on one granularity, got {sorted(labels)}")
    reports: list[tuple[tuple[int, int], dict[str, RetrievalReport]]] = []
    for setting in settings:
        reports.append((setting, evaluate_records(model, dataset, records, policy, setting)))
    return retrieval_table(reports)


def retrieval_table(
    reports: Sequence[tuple[tuple[int, int] | None, dict[str, RetrievalReport]]],
) -> list[dict[str, Any]]:
    rows: list[dict[str, Any]] = []
    for setting, by_direction in reports:
        for direction in sorted(by_direction):
            row = by_direction[direction].to_row()
            if setting is not None:
                row = {"video_iters": setting[0], "text_iters": setting[1], **row}
            rows.append(row)
    return rows


def parse_iters(raw: str) -> tuple[int, int]:
    """`"3-1"` -> (3, 1)."""
    parts = raw.strip().split("-")
    if len(parts) != 2 or not all(part.isdigit() for part in parts):
        raise UsageError(f"--iters must look like V-T with non-negative integers, got {raw!r}")
    return int(parts[0]), int(parts[1])


@dataclass(slots=True)
class ZeroShotResult:
    label: str
    index: int
    scores: np.ndarray


def _video_embedding(model: GexiaModel, frames: np.ndarray, iters: int) -> np.ndarray:
    with no_tape():
        return embed_video(model, np.asarray(frames)[None], iters).data


def zero_shot_classify(
    model: GexiaModel,
    frames: np.ndarray,
    labels: Sequence[str],
    iters: tuple[int, int],
    template: str = ZERO_SHOT_TEMPLATE,
) -> ZeroShotResult:
    """Embed "A video of a {label}." per label; argmax cosine wins, ties to the lower index."""
    if len(labels) < 2:
        raise UsageError("zero-shot classification needs at least two labels")
    video = _video_embedding(model, frames, iters[0])
    texts = embed_texts(model, [template.format(label=label) for label in labels], iters[1])
    scores = cosine_matrix(video, texts)[0]
    index = int(np.argmax(scores))
    return ZeroShotResult(label=labels[index], index=index, scores=scores)


def multiple_choice(
    model: GexiaModel,
    frames: np.ndarray,
    question: str,
    answers: Sequence[str],
    iters: tuple[int, int],
) -> tuple[int, np.ndarray]:
    """Question and each answer joined into one text; the most similar answer is chosen."""
    if not answers:
        raise UsageError("multiple choice needs at least one answer")
    video = _video_embedding(model, frames, iters[0])
    texts = embed_texts(model, [f"{question} {answer}".strip() for answer in answers], iters[1])
    scores = cosine_matrix(video, texts)[0]
    return int(np.argmax(scores)), scores


def mean_average_precision(sim: np.ndarray, relevance: np.ndarray) -> float:
    """Mean over queries of average precision; queries without positives are skipped."""
    scores = np.asarray(sim, dtype=np.float64)
    relevant = np.asarray(relevance, dtype=bool)
    if scores.shape != relevant.shape or scores.ndim != 2:
        raise DimensionError(f"scores {scores.shape} and relevance {relevant.shape} must match")
    precisions = [
        float(average_precision_score(relevant[row], scores[row]))
        for row in range(scores.shape[0])
        if relevant[row].any()
    ]
    if not precisions:
        raise UsageError("no query has a relevant candidate")
    return float(np.mean(precisions))


@dataclass(slots=True, frozen=True)
class HeatmapGeometry:
    """Mask patch and stride in pixels; `fill="mean"` paints `fill_color`, the dataset mean."""

    patch: int = 32
    stride: int = 16
    fill: str = "zero"
    fill_color: tuple[int, int, int] | None = None

    def grid(self, height: int, width: int) -> tuple[int, int]:
        if self.patch < 1 or self.stride < 1:
            raise UsageError("heatmap patch and stride must be positive")
        if self.patch > height or self.patch > width:
            raise UsageError(f"mask patch {self.patch} exceeds the {height}x{width} frame")
        if self.fill not in {"zero", "mean"}:
            raise UsageError("heatmap fill must be zero or mean")
        if self.fill == "mean" and self.fill_color is None:
            raise UsageError("mean fill needs the dataset mean color (pass a manifest)")
        return (height - self.patch) // self.stride + 1, (width - self.patch) // self.stride + 1

    def fill_value(self) -> np.ndarray:
        if self.fill == "zero" or self.fill_color is None:
            return np.zeros(3, dtype=np.uint8)
        return np.asarray(self.fill_color, dtype=np.uint8)


def dataset_mean_color(manifest: Manifest) -> tuple[int, int, int]:
    """Per-channel mean over every frame the manifest references, rounded to u8."""
    totals = np.zeros(3, dtype=np.float64)
    pixels = 0
    seen: set[str] = set()
    for record in manifest:
        relative = record.video_path or record.image_path
        if relative is None or relative in seen:
            continue
        seen.add(relative)
        frames = load_visual(record, manifest.base_dir)
        totals += frames.reshape(-1, 3).sum(axis=0, dtype=np.float64)
        pixels += frames.shape[0] * frames.shape[1] * frames.shape[2]
    if pixels == 0:
        raise UsageError("the manifest references no frames to average")
    red, green, blue = (int(value) for value in np.round(totals / pixels))
    return red, green, blue


@dataclass(slots=True)
class HeatmapResult:
    frame: int
    scores: np.ndarray
    resized: np.ndarray
    geometry: HeatmapGeometry
    baseline: float


def alignment_heatmap(
    model: GexiaModel,
    frames: np.ndarray,
    text: str,
    iters: tuple[int, int],
    geometry: HeatmapGeometry = HeatmapGeometry(),
) -> list[HeatmapResult]:
    """Per frame: score[h, w] = S - S_mask when one patch is blanked, then bilinear-resized."""
    video = np.asarray(frames)
    if video.ndim != 4:
        raise DimensionError(f"expected d x H x W x 3 frames, got {video.shape}")
    depth, height, width, _ = video.shape
    grid_h, grid_w = geometry.grid(height, width)
    fill = geometry.fill_value().astype(video.dtype)

    text_unit = _unit_rows(embed_texts(model, [text], iters[1]), "text")[0]

    def similarity(batch: np.ndarray) -> np.ndarray:
        with no_tape():
            embedded = embed_video(model, batch, iters[0]).data
        return _unit_rows(embedded, "video") @ text_unit

    baseline = float(similarity(video[None])[0])
    results: list[HeatmapResult] = []
    for t in range(depth):
        scores = np.zeros((grid_h, grid_w), dtype=np.float64)
        pending: list[tuple[int, int, np.ndarray]] = []
        for h in range(grid_h):
            for w in range(grid_w):
                top, left = h * geometry.stride, w * geometry.stride
                region = video[t, top : top + geometry.patch, left : left + geometry.patch]
                if np.all(region == fill):
                    continue  # masking changes nothing; score stays 0
                masked = video.copy()
                masked[t, top : top + geometry.patch, left : left + geometry.patch] = fill
                pending.append((h, w, masked))
        for start in range(0, len(pending), HEATMAP_BATCH):
            chunk = pending[start : start + HEATMAP_BATCH]
            masked_sims = similarity(np.stack([item[2] for item in chunk]))
            for (h, w, _), value in zip(chunk, masked_sims):
                scores[h, w] = baseline - float(value)
        resized = cv2.resize(scores, (width, height), interpolation=cv2.INTER_LINEAR)
        results.append(
            HeatmapResult(frame=t, scores=scores, resized=resized, geometry=geometry, baseline=baseline)
        )
        LOGGER.debug("[eval] heatmap frame %d: %dx%d grid", t, grid_h, grid_w)
    return results


def write_heatmaps(results: Sequence[HeatmapResult], out_dir: str | Path) -> list[Path]:
    target = Path(out_dir)
    written: list[Path] = []
    for result in results:
        written.append(write_array(target / f"scores_t{result.frame}.gxt", result.scores))
        written.append(write_array(target / f"map_t{result.frame}.gxt", result.resized))
    return written
