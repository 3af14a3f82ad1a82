from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from errors import DegenerateInputError, DimensionError, NumericError, UsageError

MAX_RANK = 4
DTYPES: dict[str, type[np.floating[Any]]] = {"f32": np.float32, "f64": np.float64}

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def resolve_dtype(dtype: str | np.dtype[Any] | type | None) -> np.dtype[Any]:
    if dtype is None:
        return np.dtype(np.float64)
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise UsageError(f"Unsupported dtype {dtype!r}; expected one of: f32, f64.")
        return np.dtype(DTYPES[dtype])
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise UsageError(f"Unsupported dtype {resolved}; expected float32 or float64.")
    return resolved


def dtype_code(dtype: np.dtype[Any]) -> str:
    return "f64" if np.dtype(dtype) == np.float64 else "f32"


class Tensor:
    """Dense float array (rank 0-4) with optional gradient tracking.

    Rank 0 is used only for scalar results such as losses; files and
    parameters always carry rank 1-4.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(
        self,
        data: Any,
        *,
        dtype: str | np.dtype[Any] | type | None = None,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        source = np.asarray(data)
        if dtype is None and source.dtype in (np.float32, np.float64):
            resolved = source.dtype
        else:
            resolved = resolve_dtype(dtype)
        array = np.array(source, dtype=resolved, copy=True)
        _validate_array(array)
        array.flags.writeable = False
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray, *, requires_grad: bool) -> Tensor:
        out = cls.__new__(cls)
        array.flags.writeable = False
        out.data = array
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype[Any]:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}.")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor._wrap(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def assign(self, array: np.ndarray) -> None:
        """Replace the payload in place of an optimizer update."""
        replacement = np.array(array, dtype=self.data.dtype, copy=True)
        if replacement.shape != self.data.shape:
            raise DimensionError(
                f"assign shape {replacement.shape} does not match tensor shape {self.shape}"
            )
        _check_finite("assign", replacement)
        replacement.flags.writeable = False
        self.data = replacement

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={dtype_code(self.dtype)}{label})"

    def __add__(self, other: Any) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Any) -> Tensor:
        return div(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __neg__(self) -> Tensor:
        return neg(self)


def _validate_array(array: np.ndarray) -> None:
    if array.ndim > MAX_RANK:
        raise DimensionError(f"Tensor rank {array.ndim} exceeds the maximum of {MAX_RANK}.")
    if any(extent <= 0 for extent in array.shape):
        raise DimensionError(f"Tensor extents must be positive, got {array.shape}.")
    _check_finite("tensor", array)


def _check_finite(op: str, array: np.ndarray) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericError(f"{op} produced non-finite values")


@dataclass(slots=True)
class TapeRecord:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


_ACTIVE_TAPE: contextvars.ContextVar[GradTape | None] = contextvars.ContextVar(
    "gexia_active_tape",
    default=None,
)


class GradTape:
    """Dynamic tape; operations executed inside `with GradTape():` are recorded in order."""

    def __init__(self) -> None:
        self.records: list[TapeRecord] = []
        self._token: contextvars.Token[GradTape | None] | None = None

    def __enter__(self) -> GradTape:
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc_info: object) -> None:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def leaves(self) -> list[Tensor]:
        produced = {id(record.output) for record in self.records}
        seen: set[int] = set()
        found: list[Tensor] = []
        for record in self.records:
            for tensor in record.inputs:
                key = id(tensor)
                if tensor.requires_grad and key not in produced and key not in seen:
                    seen.add(key)
                    found.append(tensor)
        return found


class _NoTape:
    def __enter__(self) -> None:
        self._token = _ACTIVE_TAPE.set(None)

    def __exit__(self, *exc_info: object) -> None:
        _ACTIVE_TAPE.reset(self._token)


def no_tape() -> _NoTape:
    """Run operations without recording, e.g. during evaluation."""
    return _NoTape()


def backward(loss: Tensor, tape: GradTape) -> None:
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}.")
    position = {id(record.output): idx for idx, record in enumerate(tape.records)}
    if id(loss) not in position:
        raise UsageError("Loss was not produced under the given tape.")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for record in reversed(tape.records[: position[id(loss)] + 1]):
        upstream = grads.pop(id(record.output), None)
        if upstream is None:
            continue
        for tensor, grad in zip(record.inputs, record.backward(upstream)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            grads[key] = grads[key] + grad if key in grads else grad

    for leaf in tape.leaves():
        grad = grads.get(id(leaf))
        if grad is None:
            grad = np.zeros_like(leaf.data)
        leaf.grad = np.asarray(grad, dtype=leaf.dtype).reshape(leaf.shape)


def _emit(op: str, array: np.ndarray, inputs: Sequence[Tensor], rule: BackwardFn) -> Tensor:
    array = np.asarray(array, dtype=inputs[0].dtype)
    _check_finite(op, array)
    tape = _ACTIVE_TAPE.get()
    tracked = tape is not None and any(tensor.requires_grad for tensor in inputs)
    out = Tensor._wrap(array, requires_grad=tracked)
    if tracked and tape is not None:
        tape.records.append(TapeRecord(op, tuple(inputs), out, rule))
    return out


def _lift(value: Any, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        if value.dtype != like.dtype:
            raise DimensionError(
                f"dtype mismatch: {dtype_code(value.dtype)} vs {dtype_code(like.dtype)}"
            )
        return value
    return Tensor._wrap(np.array(value, dtype=like.dtype), requires_grad=False)


def _pair(a: Any, b: Any) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    if isinstance(b, Tensor):
        return _lift(a, b), b
    raise UsageError("At least one operand must be a Tensor.")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


def add(a: Any, b: Any) -> Tensor:
    x, y = _pair(a, b)
    _broadcast_shape("add", x, y)
    return _emit(
        "add",
        x.data + y.data,
        (x, y),
        lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
    )


def sub(a: Any, b: Any) -> Tensor:
    x, y = _pair(a, b)
    _broadcast_shape("sub", x, y)
    return _emit(
        "sub",
        x.data - y.data,
        (x, y),
        lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)),
    )


def mul(a: Any, b: Any) -> Tensor:
    x, y = _pair(a, b)
    _broadcast_shape("mul", x, y)
    return _emit(
        "mul",
        x.data * y.data,
        (x, y),
        lambda g: (_unbroadcast(g * y.data, x.shape), _unbroadcast(g * x.data, y.shape)),
    )


def div(a: Any, b: Any) -> Tensor:
    x, y = _pair(a, b)
    _broadcast_shape("div", x, y)
    if np.any(y.data == 0):
        raise DegenerateInputError("division by zero")
    return _emit(
        "div",
        x.data / y.data,
        (x, y),
        lambda g: (
            _unbroadcast(g / y.data, x.shape),
            _unbroadcast(-g * x.data / (y.data * y.data), y.shape),
        ),
    )


def neg(x: Tensor) -> Tensor:
    return _emit("neg", -x.data, (x,), lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _emit("exp", out, (x,), lambda g: (g * out,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.dtype != b.dtype:
        raise DimensionError(
            f"matmul dtype mismatch: {dtype_code(a.dtype)} vs {dtype_code(b.dtype)}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from exc

    def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _emit("matmul", out, (a, b), rule)


def transpose(x: Tensor) -> Tensor:
    return swapaxes(x, -1, -2)


def swapaxes(x: Tensor, axis1: int, axis2: int) -> Tensor:
    return _emit(
        "swapaxes",
        np.swapaxes(x.data, axis1, axis2).copy(),
        (x,),
        lambda g: (np.swapaxes(g, axis1, axis2),),
    )


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}") from exc
    return _emit("reshape", out.copy(), (x,), lambda g: (g.reshape(x.shape),))


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {x.shape} to {shape}") from exc
    return _emit("broadcast_to", out, (x,), lambda g: (_unbroadcast(g, x.shape),))


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    if axis is None:
        return _emit(
            "sum",
            np.asarray(x.data.sum()),
            (x,),
            lambda g: (np.broadcast_to(g, x.shape).copy(),),
        )
    return _emit(
        "sum",
        x.data.sum(axis=axis),
        (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),),
    )


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / count)


def index_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; the embedding lookup behind every positional table."""
    if table.ndim != 2:
        raise DimensionError(f"index_rows needs a 2-D table, got {table.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DimensionError(
            f"row index out of range for table with {table.shape[0]} rows"
        )

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros_like(table.data)
        np.add.at(grad, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad,)

    return _emit("index_rows", table.data[idx], (table,), rule)


def take_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """Keep the given (distinct, ascending) positions along axis -2."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0 or np.any(np.diff(idx) <= 0):
        raise UsageError("take_rows needs a non-empty ascending index list")
    if x.ndim < 2 or idx[0] < 0 or idx[-1] >= x.shape[-2]:
        raise DimensionError(f"take_rows indices out of range for shape {x.shape}")

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros_like(x.data)
        grad[..., idx, :] = g
        return (grad,)

    return _emit("take_rows", x.data[..., idx, :], (x,), rule)


def pick(x: Tensor, indices: np.ndarray) -> Tensor:
    """Select one entry per row along the last axis."""
    idx = np.asarray(indices, dtype=np.int64)[..., None]
    out = np.take_along_axis(x.data, idx, axis=-1)[..., 0]

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, idx, g[..., None], axis=-1)
        return (grad,)

    return _emit("pick", out, (x,), rule)


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; `mask` (True = valid) adds -inf to excluded logits."""
    logits = x.data
    if mask is not None:
        valid = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
        if not np.all(valid.any(axis=-1)):
            raise DegenerateInputError("softmax row has every entry masked")
        logits = np.where(valid, logits, -np.inf)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    out = weights / weights.sum(axis=-1, keepdims=True)

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _emit("softmax_rows", out, (x,), rule)


def log_softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _emit("log_softmax_rows", out, (x,), rule)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float) -> Tensor:
    if eps <= 0:
        raise UsageError(f"layernorm eps must be positive, got {eps}")
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError(
            f"layernorm affine shapes {gain.shape}/{bias.shape} do not match width {x.shape[-1]}"
        )
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std

    def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        grad_normed = g * gain.data
        grad_x = inv_std * (
            grad_normed
            - grad_normed.mean(axis=-1, keepdims=True)
            - normed * (grad_normed * normed).mean(axis=-1, keepdims=True)
        )
        return (
            grad_x,
            _unbroadcast(g * normed, gain.shape),
            _unbroadcast(g, bias.shape),
        )

    return _emit("layernorm", normed * gain.data + bias.data, (x, gain, bias), rule)


def normalize_rows(x: Tensor) -> Tensor:
    norms = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if np.any(norms == 0):
        raise DegenerateInputError("cannot normalize a zero-norm vector")
    out = x.data / norms

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        return ((g - out * (g * out).sum(axis=-1, keepdims=True)) / norms,)

    return _emit("normalize_rows", out, (x,), rule)


def clamp_unit(x: Tensor) -> Tensor:
    """Clip to [-1, 1]; gradients pass through unchanged (rounding guard for cosines)."""
    return _emit("clamp_unit", np.clip(x.data, -1.0, 1.0), (x,), lambda g: (g,))


def cosine_sim(u: Tensor, v: Tensor) -> Tensor:
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionError(f"cosine_sim needs equal-length vectors, got {u.shape} and {v.shape}")
    return clamp_unit(sum(mul(normalize_rows(u), normalize_rows(v))))
