from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from alignment import GexiaModel, pair_loss
from config import EncoderConfig, IamConfig, RunConfig
from featurizer import tokenize
from rng import generator
from tensor import GradTape, Tensor, backward, no_tape

LOGGER = logging.getLogger(__name__)

TINY = 1e-300
GRADCHECK_CAPTIONS = ("red square drifting left", "blue circle rising")


@dataclass(slots=True)
class GradCheckEntry:
    name: str
    rel_error: float
    checked: int
    passed: bool

    def to_row(self) -> dict[str, Any]:
        return {
            "tensor": self.name,
            "rel_error": self.rel_error,
            "checked": self.checked,
            "passed": self.passed,
        }


@dataclass(slots=True)
class GradCheckReport:
    tolerance: float
    eps: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.entries)

    @property
    def max_rel_error(self) -> float:
        return max((entry.rel_error for entry in self.entries), default=0.0)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| / max(max|a|, max|n|); 0 when both vanish."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    diff = float(np.max(np.abs(analytic - numeric), initial=0.0))
    if diff == 0.0:
        return 0.0
    return diff / max(scale, TINY)


def _positions(
    name: str,
    grad: np.ndarray,
    max_per_tensor: int | None,
    seed: int,
) -> np.ndarray:
    size = grad.size
    if max_per_tensor is None or size <= max_per_tensor:
        return np.arange(size)
    flat = np.abs(grad.reshape(-1))
    picked = set(int(idx) for idx in np.argsort(-flat, kind="stable")[: max_per_tensor // 2])
    rng = generator(seed, f"gradcheck/{name}")
    for idx in rng.permutation(size):
        if len(picked) >= max_per_tensor:
            break
        picked.add(int(idx))
    return np.array(sorted(picked), dtype=np.int64)


def numeric_gradient(
    loss_fn: Callable[[], Tensor],
    param: Tensor,
    positions: np.ndarray,
    eps: float,
) -> np.ndarray:
    """Central differences (f(x + eps) - f(x - eps)) / 2 eps at flat `positions`."""
    base = param.data.copy()
    values = np.zeros(len(positions), dtype=np.float64)
    try:
        with no_tape():
            for slot, idx in enumerate(positions):
                shifted = base.copy().reshape(-1)
                shifted[idx] = base.reshape(-1)[idx] + eps
                param.assign(shifted.reshape(base.shape))
                upper = loss_fn().item()
                shifted[idx] = base.reshape(-1)[idx] - eps
                param.assign(shifted.reshape(base.shape))
                lower = loss_fn().item()
                values[slot] = (upper - lower) / (2.0 * eps)
    finally:
        param.assign(base)
    return values


def check_gradients(
    loss_fn: Callable[[], Tensor],
    named_params: Iterable[tuple[str, Tensor]],
    *,
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    max_per_tensor: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients with central differences for every named tensor."""
    params = list(named_params)
    for _, param in params:
        param.zero_grad()
    with GradTape() as tape:
        loss = loss_fn()
    backward(loss, tape)
    analytic = {
        name: (param.grad if param.grad is not None else np.zeros_like(param.data)).copy()
        for name, param in params
    }

    report = GradCheckReport(tolerance=tolerance, eps=eps)
    for name, param in params:
        grad = analytic[name]
        positions = _positions(name, grad, max_per_tensor, seed)
        numeric = numeric_gradient(loss_fn, param, positions, eps)
        error = relative_error(grad.reshape(-1)[positions].astype(np.float64), numeric)
        report.entries.append(
            GradCheckEntry(name=name, rel_error=error, checked=len(positions), passed=error < tolerance)
        )
        LOGGER.debug("[gradcheck] %s rel_error=%.3e over %d entries", name, error, len(positions))
    return report


def gradcheck_config(seed: int = 0, dtype: str = "f64") -> RunConfig:
    """Tiny pipeline: B=2, N=4, D=8, d=2, P=4, m=8."""
    return RunConfig(
        seed=seed,
        dtype=dtype,
        encoder=EncoderConfig(
            frame_h=32, frame_w=32, patch_size=16, c_v=8, c_t=8, m=8, d_short=2, d_long=3
        ),
        iam=IamConfig(n_latents=4, width=8),
    )


def run_pipeline_gradcheck(
    *,
    seed: int = 0,
    eps: float = 1e-5,
    dtype: str = "f64",
    iters: int = 3,
    tolerance: float = 1e-4,
    max_per_tensor: int | None = 48,
) -> GradCheckReport:
    """Toy encoders -> both IAMs at `iters` -> VTC loss, checked for every parameter tensor."""
    config = gradcheck_config(seed, dtype)
    enc = config.encoder
    model = GexiaModel.initialize(config)
    rng = generator(seed, "gradcheck/frames")
    frames = rng.integers(0, 256, size=(2, enc.d_short, enc.frame_h, enc.frame_w, 3), dtype=np.uint8)
    tokens = np.stack([tokenize(text, enc)[0] for text in GRADCHECK_CAPTIONS])
    ids = ["pair-0", "pair-1"]

    def loss_fn() -> Tensor:
        return pair_loss(model, frames, tokens, (iters, iters), ids)[1]

    return check_gradients(
        loss_fn,
        model.named_parameters(),
        eps=eps,
        tolerance=tolerance,
        max_per_tensor=max_per_tensor,
        seed=seed,
    )
