"""Overlap-save block geometry and reduction of binary masks to active block indices."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, FormatError, GeometryError, ShapeMismatchError
from .ops import ConvParams, Padding, PoolMode

_SBMK_MAGIC = b"SBMK"
_SBMK_HEADER = struct.Struct("<4sB3I")


@dataclass(frozen=True)
class BinaryMask:
    """Per-batch 2-d {0,1} computation mask shared across channels."""

    data: np.ndarray  # (n, h, w) uint8

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.uint8)
        if arr.ndim != 3:
            raise ShapeMismatchError(f"mask must be 3-d (n, h, w), got {arr.ndim}-d")
        if arr.size and arr.max() > 1:
            raise ShapeMismatchError("mask values must be 0 or 1")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    @property
    def active_fraction(self) -> float:
        return float(self.data.mean()) if self.data.size else 0.0

    @classmethod
    def full(cls, n: int, h: int, w: int) -> "BinaryMask":
        return cls(np.ones((n, h, w), np.uint8))

    @classmethod
    def empty(cls, n: int, h: int, w: int) -> "BinaryMask":
        return cls(np.zeros((n, h, w), np.uint8))


@dataclass(frozen=True)
class BlockSpec:
    """Tiling geometry tying a block decomposition to one convolution."""

    block_size: tuple[int, int]      # input block extent incl. halo
    overlap: tuple[int, int]         # kernel - stride, shared between adjacent blocks
    in_stride: tuple[int, int]       # block_size - overlap
    out_block_size: tuple[int, int]  # valid-conv output per block; also the output stride
    grid_origin: tuple[int, int]     # top-left input coordinate of block (0, 0); <= 0
    grid_count: tuple[int, int]
    kernel: tuple[int, int]
    conv_stride: tuple[int, int]
    padding: Padding
    input_size: tuple[int, int]      # (h, w) of the tensor this geometry was built for
    out_size: tuple[int, int]        # dense conv output extent


def compute_block_spec(input_dims, conv: ConvParams, block_size: tuple[int, int]) -> BlockSpec:
    """Derive the full overlap-save geometry for one conv layer and block size.

    input_dims is (n, h, w, c) or (n, h, w); only the spatial extent is used.
    """
    h, w = input_dims[1], input_dims[2]
    bh, bw = block_size
    kh, kw = conv.kernel
    sh, sw = conv.stride
    if bh < kh or bw < kw:
        raise GeometryError(f"block size {block_size} smaller than kernel {conv.kernel}")
    if (bh - kh) % sh or (bw - kw) % sw:
        raise GeometryError(
            f"block size {block_size} incompatible with kernel {conv.kernel} stride {conv.stride}: "
            "stride must divide block_size - kernel for gap-free output tiling"
        )
    overlap = (kh - sh, kw - sw)
    in_stride = (bh - overlap[0], bw - overlap[1])
    out_block = ((bh - kh) // sh + 1, (bw - kw) // sw + 1)
    ph, pw = conv.pad
    origin = (-ph, -pw)
    padded = (h + 2 * ph, w + 2 * pw)
    grid = (
        max(1, -(-(padded[0] - overlap[0]) // in_stride[0])),
        max(1, -(-(padded[1] - overlap[1]) // in_stride[1])),
    )
    out_size = conv.out_size(h, w)
    # Output tiling exactness: block output stride equals block output size.
    assert in_stride[0] // sh == out_block[0] and in_stride[1] // sw == out_block[1]
    assert grid[0] * out_block[0] >= out_size[0] and grid[1] * out_block[1] >= out_size[1]
    return BlockSpec(
        block_size=(bh, bw), overlap=overlap, in_stride=in_stride,
        out_block_size=out_block, grid_origin=origin, grid_count=grid,
        kernel=conv.kernel, conv_stride=conv.stride, padding=conv.padding,
        input_size=(h, w), out_size=out_size,
    )


@dataclass(frozen=True)
class BlockIndexList:
    """Active block indices as (batch, blockY, blockX) rows in ascending order."""

    entries: np.ndarray  # (B, 3) int64

    def __post_init__(self):
        arr = np.ascontiguousarray(self.entries, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "entries", arr)

    @property
    def count(self) -> int:
        return self.entries.shape[0]

    def __len__(self) -> int:
        return self.count


def _window_sums(mask: BinaryMask, spec: BlockSpec) -> np.ndarray:
    """Active-pixel count inside each block's input window (zero-fill outside), shape (n, gy, gx)."""
    n, h, w = mask.dims
    bh, bw = spec.block_size
    isy, isx = spec.in_stride
    y0, x0 = spec.grid_origin
    gy, gx = spec.grid_count
    integral = np.zeros((n, h + 1, w + 1), np.int64)
    integral[:, 1:, 1:] = mask.data.cumsum(axis=1).cumsum(axis=2)
    ys = np.clip(y0 + np.arange(gy) * isy, 0, h)
    ye = np.clip(y0 + np.arange(gy) * isy + bh, 0, h)
    xs = np.clip(x0 + np.arange(gx) * isx, 0, w)
    xe = np.clip(x0 + np.arange(gx) * isx + bw, 0, w)
    ys, ye = ys[:, None], ye[:, None]
    xs, xe = xs[None, :], xe[None, :]
    return (integral[:, ye, xe] - integral[:, ys, xe] - integral[:, ye, xs] + integral[:, ys, xs])


def reduce_mask(mask: BinaryMask, spec: BlockSpec, pool: PoolMode = PoolMode.MAX,
                threshold: float | None = None) -> BlockIndexList:
    """Pool the mask over each block window and threshold into an active block list.

    Max mode: a block is active iff any window pixel is set. Avg mode: active iff
    the window mean (zero-fill outside bounds) reaches the threshold; the default
    threshold 1/(bh*bw) makes Avg agree with Max.
    """
    if mask.dims[1:] != spec.input_size:
        raise ShapeMismatchError(
            f"mask spatial dims {mask.dims[1:]} != spec input size {spec.input_size}"
        )
    area = spec.block_size[0] * spec.block_size[1]
    if threshold is None:
        threshold = 1.0 / area
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    sums = _window_sums(mask, spec)
    if pool is PoolMode.MAX:
        active = sums > 0
    else:
        active = (sums / area) >= threshold - 1e-12
    return BlockIndexList(np.argwhere(active))


def downsample_mask(mask: BinaryMask, factor: int) -> BinaryMask:
    """Max-pool with window = stride = factor; output dims are ceil-divided."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return mask
    n, h, w = mask.dims
    oh, ow = -(-h // factor), -(-w // factor)
    padded = np.zeros((n, oh * factor, ow * factor), np.uint8)
    padded[:, :h, :w] = mask.data
    coarse = padded.reshape(n, oh, factor, ow, factor).max(axis=(2, 4))
    return BinaryMask(coarse)


@dataclass(frozen=True)
class CoverageReport:
    covered_pixels: int
    total_active_pixels: int
    total_block_area: int
    block_count: int

    @property
    def covered_fraction(self) -> float:
        if self.total_active_pixels == 0:
            return 1.0
        return self.covered_pixels / self.total_active_pixels


def coverage_check(mask: BinaryMask, spec: BlockSpec, idx: BlockIndexList) -> CoverageReport:
    """Verify disjoint scatter writes and that every active pixel is covered.

    A pixel counts as covered when at least one in-range output position whose
    receptive window contains it lies in an active block's write region.
    Violations raise CoverageError naming the first offender.
    """
    n, h, w = mask.dims
    oh, ow = spec.out_size
    obh, obw = spec.out_block_size
    kh, kw = spec.kernel
    sh, sw = spec.conv_stride
    ph = -spec.grid_origin[0]
    pw = -spec.grid_origin[1]

    write_count = np.zeros((n, oh, ow), np.int32)
    for i, by, bx in idx.entries:
        ys, xs = by * obh, bx * obw
        write_count[i, ys:min(ys + obh, oh), xs:min(xs + obw, ow)] += 1
    if write_count.size and write_count.max() > 1:
        i, y, x = np.unravel_index(int(write_count.argmax()), write_count.shape)
        raise CoverageError(f"overlapping scatter writes at output pixel (batch {i}, y {y}, x {x})")

    covered = 0
    for i, y, x in np.argwhere(mask.data):
        # output rows whose window [o*s - pad, +k) contains y
        oy_lo = max(0, -(-(y + ph - kh + 1) // sh))
        oy_hi = min(oh - 1, (y + ph) // sh)
        ox_lo = max(0, -(-(x + pw - kw + 1) // sw))
        ox_hi = min(ow - 1, (x + pw) // sw)
        if oy_lo > oy_hi or ox_lo > ox_hi:
            covered += 1  # influences no output pixel; vacuously covered
            continue
        if write_count[i, oy_lo:oy_hi + 1, ox_lo:ox_hi + 1].any():
            covered += 1
        else:
            raise CoverageError(f"active mask pixel (batch {i}, y {y}, x {x}) not covered by any active block")

    return CoverageReport(
        covered_pixels=covered,
        total_active_pixels=int(mask.data.sum()),
        total_block_area=idx.count * spec.block_size[0] * spec.block_size[1],
        block_count=idx.count,
    )


def save_sbmk(path, mask: BinaryMask) -> None:
    n, h, w = mask.dims
    with open(path, "wb") as f:
        f.write(_SBMK_HEADER.pack(_SBMK_MAGIC, 1, n, h, w))
        f.write(mask.data.tobytes())


def load_sbmk(path) -> BinaryMask:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _SBMK_HEADER.size:
        raise FormatError(f"SBMK header truncated: {len(raw)} bytes", offset=len(raw))
    magic, version, n, h, w = _SBMK_HEADER.unpack_from(raw)
    if magic != _SBMK_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_SBMK_MAGIC!r}", offset=0)
    if version != 1:
        raise FormatError(f"unsupported SBMK version {version}", offset=4)
    expected = _SBMK_HEADER.size + n * h * w
    if len(raw) != expected:
        raise FormatError(f"payload size mismatch: have {len(raw)} bytes, expected {expected}",
                          offset=min(len(raw), expected))
    payload = np.frombuffer(raw, np.uint8, offset=_SBMK_HEADER.size)
    if payload.size and payload.max() > 1:
        bad = int(np.argmax(payload > 1))
        raise FormatError(f"mask byte is {payload[bad]}, expected 0 or 1",
                          offset=_SBMK_HEADER.size + bad)
    return BinaryMask(payload.reshape(n, h, w).copy())
