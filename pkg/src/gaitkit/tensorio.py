"""GT01 binary tensor files.

Layout: magic ``GT01`` | 1 byte dtype code (0=f32, 1=f64) | 1 byte rank |
rank x uint32 little-endian extents | payload, little-endian row-major.
Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"GT01"
_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_tensor(path, array):
    """Write a float32/float64 ndarray as a GT01 file."""
    arr = np.asarray(array)
    if arr.ndim and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)  # note: this call would promote 0-d to 1-d
    if arr.dtype not in _DTYPE_TO_CODE:
        raise DataError(f"GT01 stores f32/f64 only, got {arr.dtype}")
    code = _DTYPE_TO_CODE[arr.dtype]
    header = MAGIC + bytes([code, arr.ndim]) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = arr.astype(_CODE_TO_DTYPE[code], copy=False).tobytes(order="C")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_tensor(path):
    """Read a GT01 file back into an ndarray (native byte order)."""
    blob = Path(path).read_bytes()
    if len(blob) < 6 or blob[:4] != MAGIC:
        raise DataError(f"{path}: not a GT01 tensor file")
    code, rank = blob[4], blob[5]
    if code not in _CODE_TO_DTYPE:
        raise DataError(f"{path}: unknown dtype code {code}")
    offset = 6 + 4 * rank
    if len(blob) < offset:
        raise DataError(f"{path}: truncated header")
    shape = struct.unpack(f"<{rank}I", blob[6:offset]) if rank else ()
    dtype = _CODE_TO_DTYPE[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
    if len(blob) - offset != expected:
        raise DataError(f"{path}: payload size {len(blob) - offset} != expected {expected}")
    arr = np.frombuffer(blob, dtype=dtype, offset=offset).reshape(shape)
    return arr.astype(arr.dtype.newbyteorder("="), copy=True).reshape(shape)
