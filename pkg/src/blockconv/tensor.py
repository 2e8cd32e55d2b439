"""Dense 4-d tensor container with explicit memory layout, plus the SBT4 file format."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import FormatError, ShapeMismatchError

_MAGIC = b"SBT4"
_HEADER = struct.Struct("<4sBBBB4I")  # magic, version, dtype, layout, reserved, n, h, w, c


class Layout(Enum):
    CHANNELS_LAST = 0   # storage order (n, h, w, c)
    CHANNELS_FIRST = 1  # storage order (n, c, h, w)


@dataclass(frozen=True)
class Tensor4D:
    """Contiguous 4-d activation tensor. Treated as immutable once constructed."""

    data: np.ndarray
    layout: Layout = Layout.CHANNELS_LAST

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ShapeMismatchError(f"Tensor4D requires 4 dims, got {self.data.ndim}")
        if self.data.dtype not in (np.float32, np.float64):
            raise ShapeMismatchError(f"Tensor4D dtype must be float32/float64, got {self.data.dtype}")
        object.__setattr__(self, "data", np.ascontiguousarray(self.data))

    @classmethod
    def from_nhwc(cls, arr: np.ndarray, layout: Layout = Layout.CHANNELS_LAST) -> "Tensor4D":
        """Wrap an (n, h, w, c)-ordered array, storing it in the requested layout."""
        arr = np.asarray(arr)
        if layout is Layout.CHANNELS_FIRST:
            arr = arr.transpose(0, 3, 1, 2)
        return cls(np.ascontiguousarray(arr), layout)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """Logical (n, h, w, c) regardless of storage layout."""
        if self.layout is Layout.CHANNELS_LAST:
            return tuple(self.data.shape)
        n, c, h, w = self.data.shape
        return (n, h, w, c)

    @property
    def dtype(self):
        return self.data.dtype

    def nhwc(self) -> np.ndarray:
        """View of the data in (n, h, w, c) index order (may be non-contiguous)."""
        if self.layout is Layout.CHANNELS_LAST:
            return self.data
        return self.data.transpose(0, 2, 3, 1)

    def at(self, i: int, y: int, x: int, k: int) -> float:
        if self.layout is Layout.CHANNELS_LAST:
            return self.data[i, y, x, k]
        return self.data[i, k, y, x]

    def astype(self, dtype) -> "Tensor4D":
        return Tensor4D(self.data.astype(dtype), self.layout)


def transpose_layout(x: Tensor4D) -> Tensor4D:
    """Convert between ChannelsLast and ChannelsFirst; logical contents unchanged."""
    if x.layout is Layout.CHANNELS_LAST:
        return Tensor4D(np.ascontiguousarray(x.data.transpose(0, 3, 1, 2)), Layout.CHANNELS_FIRST)
    return Tensor4D(np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)), Layout.CHANNELS_LAST)


def save_sbt4(path, t: Tensor4D) -> None:
    dtype_code = 0 if t.dtype == np.float32 else 1
    n, h, w, c = t.dims
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, 1, dtype_code, t.layout.value, 0, n, h, w, c))
        f.write(t.data.astype("<" + t.data.dtype.str[1:], copy=False).tobytes())


def load_sbt4(path) -> Tensor4D:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"SBT4 header truncated: {len(raw)} bytes", offset=len(raw))
    magic, version, dtype_code, layout_code, _, n, h, w, c = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}", offset=0)
    if version != 1:
        raise FormatError(f"unsupported SBT4 version {version}", offset=4)
    if dtype_code not in (0, 1):
        raise FormatError(f"unknown dtype code {dtype_code}", offset=5)
    if layout_code not in (0, 1):
        raise FormatError(f"unknown layout code {layout_code}", offset=6)
    dtype = np.dtype("<f4") if dtype_code == 0 else np.dtype("<f8")
    count = n * h * w * c
    expected = _HEADER.size + count * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"payload size mismatch: have {len(raw)} bytes, expected {expected}",
            offset=min(len(raw), expected),
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=_HEADER.size)
    layout = Layout(layout_code)
    shape = (n, h, w, c) if layout is Layout.CHANNELS_LAST else (n, c, h, w)
    return Tensor4D(data.reshape(shape).astype(dtype.newbyteorder("=")), layout)
