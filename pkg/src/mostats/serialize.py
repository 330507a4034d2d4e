"""Tensor wire format.

Layout (all integers little-endian):

    bytes 0..3   magic b"MOST"
    byte  4      dtype tag, u8: 0 = f32, 1 = f64
    byte  5      rank, u8
    next 8*rank  extents, u64 each
    rest         raw IEEE-754 values, little-endian, row-major

Round-trips are byte-exact; readers reject trailing garbage, unknown tags
and extent/payload mismatches.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import ContractError, DimensionError

MAGIC = b"MOST"

_TAG_OF_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPE_OF_TAG = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if not arr.flags.c_contiguous:  # ascontiguousarray would promote 0-d to 1-d
        arr = np.ascontiguousarray(arr)
    if arr.dtype not in _TAG_OF_DTYPE:
        raise ContractError(f"unsupported dtype for serialization: {arr.dtype}")
    if arr.ndim > 255:
        raise DimensionError("rank exceeds u8")
    header = MAGIC + struct.pack("<BB", _TAG_OF_DTYPE[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return header + little.tobytes(order="C")


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    arr, consumed = read_tensor(buf, 0)
    if consumed != len(buf):
        raise ContractError(f"{len(buf) - consumed} trailing bytes after tensor payload")
    return arr


def read_tensor(buf: bytes, offset: int) -> tuple[np.ndarray, int]:
    """Parse one tensor starting at ``offset``; returns (array, next offset)."""
    if buf[offset:offset + 4] != MAGIC:
        raise ContractError("bad magic, not a MOST tensor")
    tag, rank = struct.unpack_from("<BB", buf, offset + 4)
    if tag not in _DTYPE_OF_TAG:
        raise ContractError(f"unknown dtype tag {tag}")
    pos = offset + 6
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    dtype = _DTYPE_OF_TAG[tag]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    nbytes = count * dtype.itemsize
    if pos + nbytes > len(buf):
        raise DimensionError("payload shorter than extents require")
    arr = np.frombuffer(buf[pos:pos + nbytes], dtype=dtype).reshape(shape)
    return np.array(arr, dtype=arr.dtype.newbyteorder("="), order="C"), pos + nbytes


def write_tensor(fp: BinaryIO, arr: np.ndarray) -> None:
    fp.write(tensor_to_bytes(arr))
