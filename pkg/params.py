from __future__ import annotations

from dataclasses import fields
from typing import Any, Iterator

import numpy as np

from errors import DimensionError, UsageError
from rng import generator
from tensor import Tensor, resolve_dtype


class ParamSet:
    """Dataclass mixin: walks Tensor fields and nested ParamSets in declaration order."""

    __slots__ = ()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for spec in fields(self):  # type: ignore[arg-type]
            value = getattr(self, spec.name)
            name = f"{prefix}{spec.name}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, ParamSet):
                yield from value.named_parameters(prefix=f"{name}.")

    def parameter_count(self) -> int:
        return int(np.sum([tensor.data.size for _, tensor in self.named_parameters()]))

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, tensor in self.named_parameters(prefix=prefix):
            if name not in arrays:
                raise UsageError(f"missing parameter {name}")
            array = arrays[name]
            if tuple(array.shape) != tensor.shape:
                raise DimensionError(
                    f"parameter {name} has shape {tuple(array.shape)}, expected {tensor.shape}"
                )
            tensor.assign(array)


def normal(
    seed: int,
    name: str,
    shape: tuple[int, ...],
    std: float,
    dtype: Any,
) -> Tensor:
    values = generator(seed, name).normal(0.0, std, size=shape)
    return Tensor(values, dtype=resolve_dtype(dtype), requires_grad=True, name=name)


def fan_in(seed: int, name: str, shape: tuple[int, ...], dtype: Any) -> Tensor:
    return normal(seed, name, shape, 1.0 / np.sqrt(shape[0]), dtype)


def constant(value: float, name: str, shape: tuple[int, ...], dtype: Any) -> Tensor:
    return Tensor(np.full(shape, value), dtype=resolve_dtype(dtype), requires_grad=True, name=name)
