"""Minimal binary tensor container (``.mdt``).

Layout, all little-endian:

    b"MDT1" | rank u32 | rank x dim u32 | dtype code u8 | row-major payload

dtype codes: 0 = float32, 1 = uint8.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

MAGIC = b"MDT1"
MAX_RANK = 8
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}


class TensorFileError(ValueError):
    pass


def _dtype_code(dtype: np.dtype):
    if dtype.kind == "f" and dtype.itemsize == 4:
        return 0
    if dtype.kind == "u" and dtype.itemsize == 1:
        return 1
    return None


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    code = _dtype_code(array.dtype)
    if code is None:
        raise TensorFileError(f"unsupported dtype {array.dtype}; expected float32 or uint8")
    if array.ndim > MAX_RANK:
        raise TensorFileError(f"unsupported rank {array.ndim} (max {MAX_RANK})")
    header = MAGIC + struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape) + struct.pack("<B", code)
    payload = np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes()
    return header + payload


def decode_tensor(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if raw[:4] != MAGIC:
        raise TensorFileError(f"{source}: not a tensor file")
    offset = 4
    if len(raw) < offset + 4:
        raise TensorFileError(f"{source}: corrupt header (missing rank)")
    (rank,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if rank > MAX_RANK:
        raise TensorFileError(f"{source}: corrupt header (rank {rank} exceeds {MAX_RANK})")
    if len(raw) < offset + 4 * rank + 1:
        raise TensorFileError(f"{source}: corrupt header (truncated dims)")
    dims = struct.unpack_from(f"<{rank}I", raw, offset)
    offset += 4 * rank
    (code,) = struct.unpack_from("<B", raw, offset)
    offset += 1
    if code not in DTYPE_CODES:
        raise TensorFileError(f"{source}: unsupported dtype code {code}")
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) - offset != expected:
        raise TensorFileError(
            f"{source}: corrupt payload ({len(raw) - offset} bytes, expected {expected} for shape {tuple(dims)})"
        )
    array = np.frombuffer(raw, dtype=dtype, offset=offset).reshape(dims)
    return array.astype(dtype.newbyteorder("="), copy=True)


def write_tensor(path: Union[str, Path], array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    return decode_tensor(path.read_bytes(), source=str(path))
