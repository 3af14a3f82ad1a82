from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np

import tensor as tn
from config import IamConfig
from errors import ConfigError, DegenerateInputError, DimensionError, UsageError
from featurizer import DenseFeature
from params import ParamSet, constant, fan_in, normal
from tensor import Tensor

A_BASE_STD = 0.02


@dataclass(slots=True)
class AttentionParams(ParamSet):
    ln_gain: Tensor
    ln_bias: Tensor
    query: Tensor
    key: Tensor
    value: Tensor
    out_weight: Tensor
    out_bias: Tensor

    @classmethod
    def initialize(cls, width: int, source_width: int, seed: int, dtype: Any, prefix: str) -> AttentionParams:
        return cls(
            ln_gain=constant(1.0, f"{prefix}ln_gain", (width,), dtype),
            ln_bias=constant(0.0, f"{prefix}ln_bias", (width,), dtype),
            query=fan_in(seed, f"{prefix}query", (width, width), dtype),
            key=fan_in(seed, f"{prefix}key", (source_width, width), dtype),
            value=fan_in(seed, f"{prefix}value", (source_width, width), dtype),
            out_weight=fan_in(seed, f"{prefix}out_weight", (width, width), dtype),
            out_bias=constant(0.0, f"{prefix}out_bias", (width,), dtype),
        )


@dataclass(slots=True)
class BlockParams(ParamSet):
    cross: AttentionParams
    self_attn: AttentionParams

    @classmethod
    def initialize(cls, width: int, source_width: int, seed: int, dtype: Any, prefix: str) -> BlockParams:
        return cls(
            cross=AttentionParams.initialize(width, source_width, seed, dtype, f"{prefix}cross."),
            self_attn=AttentionParams.initialize(width, width, seed, dtype, f"{prefix}self_attn."),
        )


@dataclass(slots=True)
class IamParams(ParamSet):
    """Base embedding plus the unrolled block and the weight-shared iterative block."""

    a_base: Tensor
    unrolled: BlockParams
    iterative: BlockParams
    n: int
    d: int
    c: int
    heads: int = 1
    ln_eps: float = 1e-5

    @classmethod
    def initialize(cls, cfg: IamConfig, source_width: int, seed: int, dtype: Any, prefix: str) -> IamParams:
        return cls(
            a_base=normal(seed, f"{prefix}a_base", (cfg.n_latents, cfg.width), A_BASE_STD, dtype),
            unrolled=BlockParams.initialize(cfg.width, source_width, seed, dtype, f"{prefix}unrolled."),
            iterative=BlockParams.initialize(cfg.width, source_width, seed, dtype, f"{prefix}iterative."),
            n=cfg.n_latents,
            d=cfg.width,
            c=source_width,
            heads=cfg.heads,
            ln_eps=cfg.ln_eps,
        )


@dataclass(slots=True)
class IamHooks:
    """Test and instrumentation switches; the defaults leave the module untouched."""

    bypass_layernorm: bool = False
    on_block: Callable[[str, str, int], None] | None = None


DEFAULT_HOOKS = IamHooks()


@dataclass(slots=True, frozen=True)
class IterPolicy:
    table: Mapping[str, tuple[int, int]]

    @classmethod
    def from_config(cls, raw: Mapping[str, Any]) -> IterPolicy:
        table: dict[str, tuple[int, int]] = {}
        for label, pair in raw.items():
            video_iters, text_iters = (int(count) for count in pair)
            if video_iters < 0 or text_iters < 0:
                raise ConfigError(f"iteration counts for {label} must be non-negative")
            table[label] = (video_iters, text_iters)
        return cls(table=table)

    def iters_for(self, granularity: str) -> tuple[int, int]:
        try:
            return self.table[granularity]
        except KeyError as exc:
            raise ConfigError(f"No #iter entry for granularity {granularity!r}") from exc

    def require(self, labels: set[str] | frozenset[str]) -> None:
        missing = sorted(set(labels) - set(self.table))
        if missing:
            raise ConfigError(f"iter policy has no entry for: {', '.join(missing)}")


def _split_heads(x: Tensor, heads: int) -> Tensor:
    if heads == 1:
        return x
    *lead, rows, width = x.shape
    return tn.swapaxes(tn.reshape(x, (*lead, rows, heads, width // heads)), -2, -3)


def _merge_heads(x: Tensor, heads: int) -> Tensor:
    if heads == 1:
        return x
    merged = tn.swapaxes(x, -2, -3)
    *lead, rows, _, head_width = merged.shape
    return tn.reshape(merged, (*lead, rows, heads * head_width))


def _attend(
    latents: Tensor,
    source: Tensor | None,
    block: AttentionParams,
    mask: np.ndarray | None,
    *,
    heads: int,
    eps: float,
    hooks: IamHooks,
) -> Tensor:
    normed = latents if hooks.bypass_layernorm else tn.layernorm(
        latents, block.ln_gain, block.ln_bias, eps
    )
    kv_input = normed if source is None else source
    query = _split_heads(tn.matmul(normed, block.query), heads)
    key = _split_heads(tn.matmul(kv_input, block.key), heads)
    value = _split_heads(tn.matmul(kv_input, block.value), heads)
    head_width = latents.shape[-1] // heads
    scores = tn.mul(tn.matmul(query, tn.transpose(key)), 1.0 / math.sqrt(head_width))
    if mask is not None:
        mask = mask[..., None, :] if heads == 1 else mask[..., None, None, :]
    weights = tn.softmax_rows(scores, mask)
    mixed = _merge_heads(tn.matmul(weights, value), heads)
    return tn.add(latents, tn.add(tn.matmul(mixed, block.out_weight), block.out_bias))


def cross_attend(
    latents: Tensor,
    feature: DenseFeature,
    block: AttentionParams,
    *,
    heads: int = 1,
    eps: float = 1e-5,
    hooks: IamHooks = DEFAULT_HOOKS,
) -> Tensor:
    """latents + OutProj(softmax(Q(LN(A)) K(F)^T / sqrt(D)) V(F)); masked rows never attended."""
    if feature.width != block.key.shape[0]:
        raise DimensionError(
            f"feature width {feature.width} does not match key projection {block.key.shape}"
        )
    mask = np.asarray(feature.mask, dtype=bool)
    any_valid = mask.reshape(-1, feature.rows).any(axis=0)
    if not any_valid.any() or not np.all(mask.reshape(-1, feature.rows).any(axis=1)):
        raise DegenerateInputError(f"{feature.modality} feature has every row masked")
    source = feature.matrix
    if not any_valid.all():
        # Drop rows masked everywhere so padding cannot perturb the arithmetic.
        keep = np.flatnonzero(any_valid)
        source = tn.take_rows(source, keep)
        mask = mask[..., keep]
    return _attend(
        latents,
        source,
        block,
        None if mask.all() else mask,
        heads=heads,
        eps=eps,
        hooks=hooks,
    )


def self_attend(
    latents: Tensor,
    block: AttentionParams,
    *,
    heads: int = 1,
    eps: float = 1e-5,
    hooks: IamHooks = DEFAULT_HOOKS,
) -> Tensor:
    return _attend(latents, None, block, None, heads=heads, eps=eps, hooks=hooks)


def _block(latents: Tensor, feature: DenseFeature, block: BlockParams, params: IamParams, hooks: IamHooks) -> Tensor:
    crossed = cross_attend(
        latents, feature, block.cross, heads=params.heads, eps=params.ln_eps, hooks=hooks
    )
    return self_attend(crossed, block.self_attn, heads=params.heads, eps=params.ln_eps, hooks=hooks)


def iam_forward(
    feature: DenseFeature,
    params: IamParams,
    iters: int,
    hooks: IamHooks = DEFAULT_HOOKS,
) -> Tensor:
    """Approximate a variable-size feature with a fixed N x D embedding (B x N x D when batched)."""
    if iters < 0:
        raise UsageError(f"#iter must be >= 0, got {iters}")
    if feature.width != params.c:
        raise DimensionError(f"feature width {feature.width} does not match IAM width {params.c}")
    latents = params.a_base
    if feature.batched:
        latents = tn.broadcast_to(latents, (feature.matrix.shape[0], params.n, params.d))
    latents = _block(latents, feature, params.unrolled, params, hooks)
    if hooks.on_block is not None:
        hooks.on_block(feature.modality, "unrolled", 0)
    for step in range(1, iters + 1):
        latents = _block(latents, feature, params.iterative, params, hooks)
        if hooks.on_block is not None:
            hooks.on_block(feature.modality, "iterative", step)
    return latents


def pool_latents(latents: Tensor) -> Tensor:
    """Average over the N latent rows."""
    return tn.mean(latents, axis=-2)
