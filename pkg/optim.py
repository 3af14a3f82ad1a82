from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from errors import DimensionError, UsageError
from tensor import Tensor


class Schedule(Protocol):
    def lr_at(self, base_lr: float, step: int) -> float: ...


@dataclass(slots=True, frozen=True)
class ConstantSchedule:
    def lr_at(self, base_lr: float, step: int) -> float:
        return base_lr


@dataclass(slots=True, frozen=True)
class CosineSchedule:
    total_steps: int
    min_lr: float = 0.0

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise UsageError("cosine schedule needs total_steps >= 1")
        if self.min_lr < 0:
            raise UsageError("cosine schedule min_lr must be non-negative")

    def lr_at(self, base_lr: float, step: int) -> float:
        # A group below the floor (e.g. frozen at 0) keeps its own rate.
        floor = min(self.min_lr, base_lr)
        progress = min(max(step, 0), self.total_steps) / self.total_steps
        return floor + (base_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


def build_schedule(kind: str, total_steps: int, min_lr: float) -> Schedule:
    if kind == "constant":
        return ConstantSchedule()
    if kind == "cosine":
        return CosineSchedule(total_steps=total_steps, min_lr=min_lr)
    raise UsageError(f"Unknown schedule {kind!r}; expected constant or cosine.")


@dataclass(slots=True)
class ParamGroup:
    name: str
    params: list[tuple[str, Tensor]]
    lr: float
    weight_decay: float = 0.0


@dataclass(slots=True)
class OptimizerState:
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    """Adam with decoupled weight decay over named parameter groups."""

    def __init__(
        self,
        groups: list[ParamGroup],
        *,
        schedule: Schedule | None = None,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        names = [name for group in groups for name, _ in group.params]
        if len(names) != len(set(names)):
            raise UsageError("A parameter may belong to only one optimizer group.")
        self.groups = groups
        self.schedule: Schedule = schedule or ConstantSchedule()
        self.state = OptimizerState(beta1=beta1, beta2=beta2, eps=eps)
        for group in groups:
            for name, param in group.params:
                self.state.first_moment[name] = np.zeros_like(param.data)
                self.state.second_moment[name] = np.zeros_like(param.data)

    def current_lrs(self) -> dict[str, float]:
        return {
            group.name: self.schedule.lr_at(group.lr, self.state.step) for group in self.groups
        }

    def zero_grad(self) -> None:
        for group in self.groups:
            for _, param in group.params:
                param.zero_grad()

    def step(self) -> dict[str, float]:
        state = self.state
        lrs = self.current_lrs()
        t = state.step + 1
        correction1 = 1.0 - state.beta1**t
        correction2 = 1.0 - state.beta2**t
        for group in self.groups:
            lr = lrs[group.name]
            if lr == 0.0:
                continue
            for name, param in group.params:
                grad = param.grad
                if grad is None:
                    continue
                if grad.shape != param.shape:
                    raise DimensionError(
                        f"gradient for {name} has shape {grad.shape}, expected {param.shape}"
                    )
                m = state.first_moment[name]
                v = state.second_moment[name]
                m = state.beta1 * m + (1.0 - state.beta1) * grad
                v = state.beta2 * v + (1.0 - state.beta2) * (grad * grad)
                state.first_moment[name] = m
                state.second_moment[name] = v
                update = (m / correction1) / (np.sqrt(v / correction2) + state.eps)
                decayed = param.data - lr * group.weight_decay * param.data
                param.assign(decayed - lr * update)
        state.step = t
        return lrs

    def named_state(self) -> dict[str, np.ndarray]:
        tensors: dict[str, np.ndarray] = {}
        for name, value in self.state.first_moment.items():
            tensors[f"m/{name}"] = value
        for name, value in self.state.second_moment.items():
            tensors[f"v/{name}"] = value
        return tensors

    def load_named_state(self, tensors: dict[str, np.ndarray], step: int) -> None:
        for name in self.state.first_moment:
            for prefix, store in (("m", self.state.first_moment), ("v", self.state.second_moment)):
                key = f"{prefix}/{name}"
                if key not in tensors:
                    raise UsageError(f"optimizer state is missing {key}")
                if tensors[key].shape != store[name].shape:
                    raise DimensionError(f"optimizer state {key} has shape {tensors[key].shape}")
                store[name] = np.array(tensors[key], dtype=store[name].dtype)
        self.state.step = step
