from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, Sequence

import numpy as np

import tensor as tn
from config import LONG_VIDEO_GRANULARITIES, EncoderConfig
from errors import DataFormatError, DimensionError, GexiaError
from gxt import read_array, write_array
from params import ParamSet, fan_in, normal
from tensor import Tensor, resolve_dtype

if TYPE_CHECKING:
    from manifest import ClipRecord, Manifest

# Embedding scales for the toy encoders; token identity dominates position.
TOKEN_EMBED_STD = 1.0
POSITION_EMBED_STD = 0.1


@dataclass(slots=True)
class DenseFeature:
    """M x C encoder output (or B x M x C for a homogeneous batch) with row validity flags."""

    matrix: Tensor
    modality: str
    mask: np.ndarray

    @property
    def rows(self) -> int:
        return self.matrix.shape[-2]

    @property
    def width(self) -> int:
        return self.matrix.shape[-1]

    @property
    def batched(self) -> bool:
        return self.matrix.ndim == 3


@dataclass(slots=True)
class VideoEncoderParams(ParamSet):
    patch_proj: Tensor
    patch_bias: Tensor
    patch_pos: Tensor
    frame_pos: Tensor

    @classmethod
    def initialize(cls, cfg: EncoderConfig, seed: int, dtype: Any, prefix: str = "video_encoder.") -> VideoEncoderParams:
        return cls(
            patch_proj=fan_in(seed, f"{prefix}patch_proj", (cfg.patch_dim, cfg.c_v), dtype),
            patch_bias=Tensor(np.zeros(cfg.c_v), dtype=resolve_dtype(dtype), requires_grad=True),
            patch_pos=normal(
                seed, f"{prefix}patch_pos", (cfg.patches_per_frame, cfg.c_v), POSITION_EMBED_STD, dtype
            ),
            frame_pos=normal(
                seed, f"{prefix}frame_pos", (cfg.max_frames, cfg.c_v), POSITION_EMBED_STD, dtype
            ),
        )


@dataclass(slots=True)
class TextEncoderParams(ParamSet):
    token_embedding: Tensor
    position: Tensor

    @classmethod
    def initialize(cls, cfg: EncoderConfig, seed: int, dtype: Any, prefix: str = "text_encoder.") -> TextEncoderParams:
        return cls(
            token_embedding=normal(
                seed, f"{prefix}token_embedding", (cfg.vocab_size + 3, cfg.c_t), TOKEN_EMBED_STD, dtype
            ),
            position=normal(seed, f"{prefix}position", (cfg.m, cfg.c_t), POSITION_EMBED_STD, dtype),
        )


def special_ids(cfg: EncoderConfig) -> tuple[int, int, int]:
    """(BOS, EOS, PAD) sit directly after the byte vocabulary."""
    return cfg.vocab_size, cfg.vocab_size + 1, cfg.vocab_size + 2


def frame_indices(length: int, d: int) -> np.ndarray:
    if length < 1:
        raise DataFormatError("cannot sample frames from an empty video")
    if d < 1:
        raise DimensionError(f"frame count must be >= 1, got {d}")
    return (np.arange(d, dtype=np.int64) * length) // d


def sample_frames(video: np.ndarray, d: int) -> np.ndarray:
    """Pick d uniformly spaced frames (floor(i*L/d)); short videos repeat frames."""
    frames = np.asarray(video)
    if frames.ndim != 4 or frames.shape[0] == 0:
        raise DataFormatError(f"expected a d x H x W x 3 frame stack, got shape {frames.shape}")
    return frames[frame_indices(frames.shape[0], d)]


def patchify(frames: np.ndarray, cfg: EncoderConfig, dtype: Any) -> np.ndarray:
    """(..., d, H, W, 3) u8 -> (..., d*P, patch_dim) floats in [0, 1], row-major patch order."""
    arr = np.asarray(frames)
    if arr.ndim < 4 or arr.shape[-3:] != (cfg.frame_h, cfg.frame_w, 3):
        raise DimensionError(
            f"frames of shape {arr.shape} do not match {cfg.frame_h}x{cfg.frame_w}x3"
        )
    lead = arr.shape[:-4]
    d = arr.shape[-4]
    ps = cfg.patch_size
    gh, gw = cfg.frame_h // ps, cfg.frame_w // ps
    grid = arr.reshape(*lead, d, gh, ps, gw, ps, 3)
    order = tuple(range(len(lead))) + tuple(len(lead) + i for i in (0, 1, 3, 2, 4, 5))
    patches = grid.transpose(order).reshape(*lead, d * gh * gw, ps * ps * 3)
    return patches.astype(resolve_dtype(dtype)) / 255.0


def encode_video(frames: np.ndarray, cfg: EncoderConfig, params: VideoEncoderParams) -> DenseFeature:
    dtype = params.patch_proj.dtype
    patches = Tensor(patchify(frames, cfg, dtype), dtype=dtype)
    d = np.asarray(frames).shape[-4]
    if d > cfg.max_frames:
        raise DimensionError(f"{d} frames exceed the {cfg.max_frames} frame-position slots")
    p = cfg.patches_per_frame
    projected = tn.add(tn.matmul(patches, params.patch_proj), params.patch_bias)
    positions = tn.add(
        tn.index_rows(params.patch_pos, np.tile(np.arange(p), d)),
        tn.index_rows(params.frame_pos, np.repeat(np.arange(d), p)),
    )
    matrix = tn.add(projected, positions)
    mask = np.ones(matrix.shape[:-1], dtype=bool)
    return DenseFeature(matrix=matrix, modality="video", mask=mask)


def tokenize(text: str, cfg: EncoderConfig) -> tuple[np.ndarray, np.ndarray]:
    bos, eos, pad = special_ids(cfg)
    body = [bos, *text.encode("utf-8")]
    if len(body) + 1 <= cfg.m:
        body.append(eos)
    else:
        body = body[: cfg.m - 1] + [eos]
    real = len(body)
    ids = np.full(cfg.m, pad, dtype=np.uint16 if cfg.token_bytes == 2 else np.uint32)
    ids[:real] = body
    mask = np.zeros(cfg.m, dtype=bool)
    mask[:real] = True
    return ids, mask


def detokenize(ids: np.ndarray, cfg: EncoderConfig) -> str:
    payload = bytes(int(token) for token in np.asarray(ids).reshape(-1) if int(token) < 256)
    return payload.decode("utf-8", errors="replace")


def encode_text(tokens: np.ndarray, cfg: EncoderConfig, params: TextEncoderParams) -> DenseFeature:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim not in (1, 2) or ids.shape[-1] != cfg.m:
        raise DimensionError(f"token array of shape {ids.shape} does not have length m={cfg.m}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size + 3:
        raise DataFormatError(f"token id outside 0..{cfg.vocab_size + 2}")
    _, _, pad = special_ids(cfg)
    mask = ids != pad
    embedded = tn.add(
        tn.index_rows(params.token_embedding, ids),
        tn.index_rows(params.position, np.arange(cfg.m)),
    )
    matrix = tn.mul(embedded, mask[..., None].astype(embedded.dtype))
    return DenseFeature(matrix=matrix, modality="text", mask=mask)


def load_visual(record: ClipRecord, base_dir: str | Path) -> np.ndarray:
    """Frame stack of a record as L x H x W x 3 u8 (images become a single frame)."""
    relative = record.video_path or record.image_path
    if not relative:
        raise DataFormatError(f"record {record.id}: no video_path or image_path")
    try:
        frames = read_array(Path(base_dir) / relative)
    except GexiaError as exc:
        raise DataFormatError(f"record {record.id}: {exc}") from exc
    if frames.dtype != np.uint8:
        raise DataFormatError(f"record {record.id}: frames must be u8, got {frames.dtype}")
    if frames.ndim == 3:
        frames = frames[None]
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise DataFormatError(f"record {record.id}: frames have shape {frames.shape}")
    return frames


class FileFeatureProvider:
    """Precomputed dense features stored as `<id>.video.gxt` / `<id>.text.gxt` M x C files."""

    def __init__(self, directory: str | Path, dtype: Any = "f32"):
        self.directory = Path(directory)
        self.dtype = resolve_dtype(dtype)

    def path_for(self, record_id: str, modality: str) -> Path:
        return self.directory / f"{record_id}.{modality}.gxt"

    def load(self, record: ClipRecord, modality: str) -> DenseFeature:
        path = self.path_for(record.id, modality)
        if not path.exists():
            raise DataFormatError(f"record {record.id}: missing {modality} feature file {path}")
        try:
            array = read_array(path)
        except GexiaError as exc:
            raise DataFormatError(f"record {record.id}: {exc}") from exc
        if array.ndim != 2:
            raise DataFormatError(
                f"record {record.id}: {modality} feature must be M x C, got shape {array.shape}"
            )
        matrix = Tensor(array, dtype=self.dtype)
        return DenseFeature(matrix=matrix, modality=modality, mask=np.ones(array.shape[0], dtype=bool))

    def write(self, record_id: str, feature: DenseFeature) -> Path:
        if feature.batched:
            raise DimensionError("write one record's feature at a time")
        return write_array(self.path_for(record_id, feature.modality), feature.matrix.data)


def frames_for(granularity: str, cfg: EncoderConfig) -> int:
    """Frames sampled per record: one for images, d_long for long videos, d_short otherwise."""
    if granularity == "IT":
        return 1
    if granularity in LONG_VIDEO_GRANULARITIES:
        return cfg.d_long
    return cfg.d_short


class ClipDataset:
    """Sampled frame stacks and token ids per record, cached after the first load."""

    def __init__(self, manifest: Manifest, cfg: EncoderConfig):
        self.manifest = manifest
        self.cfg = cfg
        self._frames: dict[str, np.ndarray] = {}
        self._tokens: dict[str, np.ndarray] = {}

    def frames(self, record: ClipRecord) -> np.ndarray:
        cached = self._frames.get(record.id)
        if cached is None:
            video = load_visual(record, self.manifest.base_dir)
            cached = sample_frames(video, frames_for(record.granularity, self.cfg))
            self._frames[record.id] = cached
        return cached

    def tokens(self, record: ClipRecord) -> np.ndarray:
        cached = self._tokens.get(record.id)
        if cached is None:
            cached, _ = tokenize(record.text, self.cfg)
            self._tokens[record.id] = cached
        return cached

    def batch(self, records: Sequence[ClipRecord]) -> tuple[np.ndarray, np.ndarray]:
        """(B x d x H x W x 3 frames, B x m token ids) for a single-granularity batch."""
        stacks = [self.frames(record) for record in records]
        shapes = {stack.shape for stack in stacks}
        if len(shapes) != 1:
            raise DimensionError(f"batch mixes frame stack shapes: {sorted(shapes)}")
        return np.stack(stacks), np.stack([self.tokens(record) for record in records])
