from __future__ import annotations

import struct
from pathlib import Path
from typing import Any

import numpy as np

from errors import DataFormatError, DimensionError
from tensor import MAX_RANK, Tensor
from utils import atomic_write

MAGIC = b"GXT1"
HEADER = struct.Struct("<4sBBH")
DTYPE_CODES: dict[int, np.dtype[Any]] = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("u1"),
}
CODE_FOR_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}


def encode_array(array: np.ndarray) -> bytes:
    """Serialize a rank 1-4 array: magic, dtype code, rank, reserved, u64 extents, payload."""
    array = np.asarray(array)
    if array.ndim == 0:
        array = array.reshape(1)
    if not 1 <= array.ndim <= MAX_RANK:
        raise DimensionError(f"GXT1 stores rank 1-{MAX_RANK} tensors, got rank {array.ndim}")
    if any(extent <= 0 for extent in array.shape):
        raise DimensionError(f"GXT1 extents must be positive, got {array.shape}")
    code = CODE_FOR_DTYPE.get(np.dtype(array.dtype))
    if code is None:
        raise DataFormatError(f"GXT1 cannot store dtype {array.dtype}")
    parts = [HEADER.pack(MAGIC, code, array.ndim, 0)]
    parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
    parts.append(np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes(order="C"))
    return b"".join(parts)


def decode_array(payload: bytes, *, source: str = "<bytes>") -> np.ndarray:
    if len(payload) < HEADER.size:
        raise DataFormatError(f"{source}: truncated GXT1 header")
    magic, code, rank, reserved = HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise DataFormatError(f"{source}: bad magic {magic!r}")
    if code not in DTYPE_CODES:
        raise DataFormatError(f"{source}: unknown dtype code {code}")
    if not 1 <= rank <= MAX_RANK:
        raise DataFormatError(f"{source}: rank {rank} outside 1-{MAX_RANK}")
    if reserved != 0:
        raise DataFormatError(f"{source}: reserved header bytes must be zero")
    offset = HEADER.size
    extents_size = 8 * rank
    if len(payload) < offset + extents_size:
        raise DataFormatError(f"{source}: truncated extents")
    dims = struct.unpack_from(f"<{rank}Q", payload, offset)
    if any(extent == 0 for extent in dims):
        raise DataFormatError(f"{source}: zero extent in {dims}")
    offset += extents_size
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    body = payload[offset:]
    if len(body) != expected:
        raise DataFormatError(
            f"{source}: payload holds {len(body)} bytes, expected {expected}"
        )
    return np.frombuffer(body, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def write_array(path: str | Path, array: np.ndarray) -> Path:
    return atomic_write(path, encode_array(array))


def read_array(path: str | Path) -> np.ndarray:
    source = Path(path)
    try:
        payload = source.read_bytes()
    except FileNotFoundError as exc:
        raise DataFormatError(f"missing tensor file: {source}") from exc
    return decode_array(payload, source=str(source))


def tensor_write(path: str | Path, t: Tensor) -> Path:
    return write_array(path, t.data)


def tensor_read(path: str | Path, *, requires_grad: bool = False) -> Tensor:
    array = read_array(path)
    if array.dtype == np.uint8:
        raise DataFormatError(f"{path}: u8 frame payloads are not numeric tensors")
    return Tensor(array, requires_grad=requires_grad)
