from __future__ import annotations

import asyncio
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from alignment import GexiaModel, embed_texts
from client import ExtractiveSummarizer, Summarizer, truncate_words
from config import GexConfig, SummarizerConfig
from errors import DegenerateInputError, DimensionError, RemoteServiceError, UsageError
from featurizer import load_visual
from gxt import write_array
from manifest import ClipRecord, Manifest, Provenance
from rng import generator

LOGGER = logging.getLogger(__name__)

FRAMES_DIR = "frames"


@dataclass(slots=True)
class ExpansionReport:
    histogram: dict[str, int]
    added: dict[str, int]
    summary_failures: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _file_stem(record_id: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in record_id)


def _children_digest(children: Sequence[ClipRecord]) -> str:
    joined = "\n".join(child.id for child in children).encode("utf-8")
    return hashlib.blake2b(joined, digest_size=6).hexdigest()


def group_by_source(
    records: Iterable[ClipRecord],
    min_group: int = 4,
    granularity: str = "SVST",
) -> list[list[ClipRecord]]:
    """Same-source records of one granularity in t_start order; small groups dropped."""
    groups: dict[str, list[ClipRecord]] = {}
    for record in records:
        if record.granularity == granularity:
            groups.setdefault(record.source_id, []).append(record)
    ordered: list[list[ClipRecord]] = []
    for source_id in sorted(groups):
        group = sorted(groups[source_id], key=lambda record: (record.t_start, record.id))
        if len(group) >= min_group:
            ordered.append(group)
    return ordered


def split_group(group: Sequence[ClipRecord], max_children: int) -> list[list[ClipRecord]]:
    """Whole group when `max_children` is 0, else consecutive runs (single leftovers dropped)."""
    if max_children == 0:
        return [list(group)] if len(group) >= 2 else []
    runs = [list(group[start : start + max_children]) for start in range(0, len(group), max_children)]
    return [run for run in runs if len(run) >= 2]


def _concat_frames(children: Sequence[ClipRecord], base_dir: Path) -> np.ndarray:
    stacks = [load_visual(child, base_dir) for child in children]
    if len({stack.shape[1:] for stack in stacks}) != 1:
        raise DimensionError("cannot concatenate clips with different frame sizes")
    return np.concatenate(stacks, axis=0)


def _integrated_record(
    record_id: str,
    children: Sequence[ClipRecord],
    frames: np.ndarray,
    out_dir: Path,
    op: str,
    source_id: str,
) -> ClipRecord:
    relative = Path(FRAMES_DIR) / f"{_file_stem(record_id)}.gxt"
    write_array(out_dir / relative, frames)
    return ClipRecord(
        id=record_id,
        granularity="LVLT",
        source_id=source_id,
        t_start=children[0].t_start,
        t_end=children[-1].t_end,
        video_path=relative.as_posix(),
        image_path=None,
        text=" ".join(child.text for child in children),
        provenance=Provenance(op=op, children=tuple(child.id for child in children)),
    )


def integrate(group: Sequence[ClipRecord], base_dir: str | Path, out_dir: str | Path) -> ClipRecord:
    """Concatenate same-source clips (frames in time order, texts joined by one space)."""
    if len(group) < 2:
        raise UsageError("integration needs at least two clips")
    sources = {record.source_id for record in group}
    if len(sources) != 1:
        raise UsageError(f"integration mixes source ids: {sorted(sources)}")
    if any(record.is_image for record in group):
        raise UsageError("integration concatenates video records only")
    children = sorted(group, key=lambda record: (record.t_start, record.id))
    source_id = children[0].source_id
    record_id = f"lvlt:{source_id}:{_children_digest(children)}"
    frames = _concat_frames(children, Path(base_dir))
    return _integrated_record(record_id, children, frames, Path(out_dir), "integrate", source_id)


def integrate_random(
    manifest: Manifest,
    k: int,
    n: int,
    seed: int,
    out_dir: str | Path,
    granularity: str = "SVST",
) -> list[ClipRecord]:
    """n LVLT records, each from k distinct uniformly sampled clips in sampled order."""
    population = [record for record in manifest if record.granularity == granularity]
    if k < 2:
        raise UsageError("random integration needs k >= 2")
    if k > len(population):
        raise UsageError(f"random integration needs k <= {len(population)} records, got k={k}")
    rng = generator(seed, "gex/integrate_random")
    outputs: list[ClipRecord] = []
    for index in range(n):
        picks = rng.choice(len(population), size=k, replace=False)
        children = [population[int(idx)] for idx in picks]
        record_id = f"lvlt-rand:{seed}:{index:04d}"
        frames = _concat_frames(children, manifest.base_dir)
        source_id = children[0].source_id if len({c.source_id for c in children}) == 1 else "mixed"
        outputs.append(
            _integrated_record(record_id, children, frames, Path(out_dir), "integrate_random", source_id)
        )
    return outputs


async def compress_text(
    lvlt: ClipRecord,
    summarizer: Summarizer,
    *,
    fallback: Summarizer | None = None,
    fail_hard: bool = False,
    failures: list[str] | None = None,
) -> ClipRecord:
    """LVST record sharing the LVLT video, with the summary capped at max_words."""
    if lvlt.granularity != "LVLT":
        raise UsageError(f"compress_text expects an LVLT record, got {lvlt.granularity} ({lvlt.id})")
    try:
        summary = await summarizer.summarize(lvlt.text)
    except RemoteServiceError as exc:
        if fail_hard or fallback is None:
            raise
        LOGGER.warning("[gex] %s: remote summary failed (%s); using extractive fallback", lvlt.id, exc)
        if failures is not None:
            failures.append(lvlt.id)
        summary = await fallback.summarize(lvlt.text)
    return ClipRecord(
        id=f"lvst:{lvlt.id}",
        granularity="LVST",
        source_id=lvlt.source_id,
        t_start=lvlt.t_start,
        t_end=lvlt.t_end,
        video_path=lvlt.video_path,
        image_path=None,
        text=truncate_words(summary, summarizer.max_words),
        provenance=Provenance(op="compress_text", children=(lvlt.id,)),
    )


def compress_video(record: ClipRecord, base_dir: str | Path, out_dir: str | Path) -> ClipRecord:
    """IT record holding frame floor(d/2) of the clip, text copied."""
    if record.is_image:
        raise UsageError(f"{record.id} is already an image record")
    frames = load_visual(record, Path(base_dir))
    record_id = f"it:{record.id}"
    relative = Path(FRAMES_DIR) / f"{_file_stem(record_id)}.gxt"
    write_array(Path(out_dir) / relative, frames[frames.shape[0] // 2])
    midpoint = (record.t_start + record.t_end) / 2.0
    return ClipRecord(
        id=record_id,
        granularity="IT",
        source_id=record.source_id,
        t_start=midpoint,
        t_end=midpoint,
        video_path=None,
        image_path=relative.as_posix(),
        text=record.text,
        provenance=Provenance(op="compress_video", children=(record.id,)),
    )


async def expand(
    manifest: Manifest,
    gex_cfg: GexConfig,
    summarizer_cfg: SummarizerConfig,
    summarizer: Summarizer,
    out_dir: str | Path,
    *,
    level: str = "SVST",
) -> tuple[Manifest, ExpansionReport]:
    """Grow a manifest with LVLT (integration), LVST (text compression) and optionally IT records.

    `level="LVLT"` integrates existing integrated LVLT records into a further level.
    """
    if len(manifest) == 0:
        raise UsageError("cannot expand an empty manifest")
    if level not in {"SVST", "LVLT"}:
        raise UsageError("expansion level must be SVST or LVLT")
    if level == "SVST" and any(record.granularity != "SVST" for record in manifest):
        raise UsageError("expansion expects an all-SVST manifest (use level LVLT for a further level)")
    target = Path(out_dir)
    report = ExpansionReport(histogram={}, added={})

    candidates = [
        record
        for record in manifest
        if record.granularity == level and record.provenance.op != "integrate_random"
    ]
    lvlt: list[ClipRecord] = []
    for group in group_by_source(candidates, gex_cfg.min_group, granularity=level):
        for run in split_group(group, gex_cfg.max_children):
            lvlt.append(integrate(run, manifest.base_dir, target))

    if not lvlt:
        if gex_cfg.random_fallback:
            n = gex_cfg.random_n or max(1, len(candidates) // gex_cfg.random_k)
            lvlt = integrate_random(manifest, gex_cfg.random_k, n, gex_cfg.seed, target, granularity=level)
        else:
            message = f"no source has >= {gex_cfg.min_group} {level} records; nothing to integrate"
            LOGGER.warning("[gex] %s", message)
            report.warnings.append(message)

    fallback = ExtractiveSummarizer(summarizer.max_words)
    semaphore = asyncio.Semaphore(summarizer_cfg.max_in_flight)

    async def compress_one(record: ClipRecord) -> ClipRecord:
        async with semaphore:
            return await compress_text(
                record,
                summarizer,
                fallback=fallback,
                fail_hard=summarizer_cfg.fail_hard,
                failures=report.summary_failures,
            )

    lvst = list(await asyncio.gather(*(compress_one(record) for record in lvlt)))
    images = (
        [compress_video(record, manifest.base_dir, target) for record in manifest if record.granularity == "SVST"]
        if gex_cfg.with_images and level == "SVST"
        else []
    )

    added = sorted([*lvlt, *lvst, *images], key=lambda record: record.id)
    expanded = Manifest([*manifest.rebased(target).records, *added], base_dir=target)
    expanded.validate()
    report.histogram = expanded.histogram()
    for record in added:
        report.added[record.granularity] = report.added.get(record.granularity, 0) + 1
    report.summary_failures.sort()
    LOGGER.info("[gex] %d -> %d records %s", len(manifest), len(expanded), report.histogram)
    return expanded, report


@dataclass(slots=True, frozen=True)
class AuditResult:
    mean: float
    std: float
    n_pairs: int


def similarity_audit(
    model: GexiaModel,
    set_a: Sequence[str],
    set_b: Sequence[str],
    iters: int | tuple[int, int],
) -> AuditResult:
    """Mean and std of cos(A_i, B_i) between index-paired texts under the text IAM."""
    if len(set_a) != len(set_b):
        raise UsageError(f"audit sets differ in size: {len(set_a)} vs {len(set_b)}")
    if not set_a:
        raise UsageError("audit sets are empty")
    iters_a, iters_b = (iters, iters) if isinstance(iters, int) else iters
    emb_a = embed_texts(model, list(set_a), iters_a)
    emb_b = embed_texts(model, list(set_b), iters_b)
    norms = np.linalg.norm(emb_a, axis=1) * np.linalg.norm(emb_b, axis=1)
    if np.any(norms == 0):
        raise DegenerateInputError("audit text produced a zero-norm embedding")
    cosines = np.clip((emb_a * emb_b).sum(axis=1) / norms, -1.0, 1.0)
    return AuditResult(mean=float(cosines.mean()), std=float(cosines.std()), n_pairs=len(cosines))
