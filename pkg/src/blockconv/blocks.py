"""Blockwise slicing between dense tensors and stacked block tensors.

Gather reads overlapping input windows (zero-filling out-of-bounds halo reads);
scatter writes disjoint output windows, so blocks can be processed in any order.
The fused transpose variants produce ChannelsFirst stacks in a single pass.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import GeometryError, ShapeMismatchError
from .tensor import Layout, Tensor4D
from .tiling import BlockIndexList, BlockSpec


@dataclass(frozen=True)
class GatheredBlocks:
    """Stacked active blocks plus the geometry they came from."""

    tensor: Tensor4D          # (B, bh, bw, c) logical dims
    spec: BlockSpec
    indices: BlockIndexList

    def __post_init__(self):
        if self.tensor.dims[0] != self.indices.count:
            raise ShapeMismatchError(
                f"block tensor batch {self.tensor.dims[0]} != index count {self.indices.count}"
            )

    @property
    def count(self) -> int:
        return self.indices.count

    def with_tensor(self, tensor: Tensor4D) -> "GatheredBlocks":
        return GatheredBlocks(tensor, self.spec, self.indices)


def _check_indices(idx: BlockIndexList, spec: BlockSpec, n: int) -> None:
    if idx.count == 0:
        return
    e = idx.entries
    gy, gx = spec.grid_count
    if e[:, 0].min() < 0 or e[:, 0].max() >= n:
        raise GeometryError(f"block batch index out of range [0, {n})")
    if e[:, 1].min() < 0 or e[:, 1].max() >= gy or e[:, 2].min() < 0 or e[:, 2].max() >= gx:
        raise GeometryError(f"block index outside grid {spec.grid_count}")


def _check_source(x: Tensor4D, spec: BlockSpec) -> None:
    n, h, w, c = x.dims
    if (h, w) != spec.input_size:
        raise ShapeMismatchError(f"tensor spatial dims {(h, w)} != spec input size {spec.input_size}")


def gather(x: Tensor4D, idx: BlockIndexList, spec: BlockSpec) -> GatheredBlocks:
    """Copy each indexed input window into a (B, bh, bw, c) stack."""
    _check_source(x, spec)
    n, h, w, c = x.dims
    _check_indices(idx, spec, n)
    bh, bw = spec.block_size
    isy, isx = spec.in_stride
    y0, x0 = spec.grid_origin
    arr = x.nhwc()
    out = np.zeros((idx.count, bh, bw, c), dtype=x.dtype)
    for b, (i, by, bx) in enumerate(idx.entries):
        ys = y0 + by * isy
        xs = x0 + bx * isx
        sy, sx = max(ys, 0), max(xs, 0)
        ey, ex = min(ys + bh, h), min(xs + bw, w)
        if sy < ey and sx < ex:
            out[b, sy - ys:ey - ys, sx - xs:ex - xs, :] = arr[i, sy:ey, sx:ex, :]
    return GatheredBlocks(Tensor4D(out), spec, idx)


def gather_transpose(x: Tensor4D, idx: BlockIndexList, spec: BlockSpec) -> GatheredBlocks:
    """Single-pass gather straight into ChannelsFirst block storage."""
    _check_source(x, spec)
    n, h, w, c = x.dims
    _check_indices(idx, spec, n)
    bh, bw = spec.block_size
    isy, isx = spec.in_stride
    y0, x0 = spec.grid_origin
    arr = x.nhwc()
    out = np.zeros((idx.count, c, bh, bw), dtype=x.dtype)
    for b, (i, by, bx) in enumerate(idx.entries):
        ys = y0 + by * isy
        xs = x0 + bx * isx
        sy, sx = max(ys, 0), max(xs, 0)
        ey, ex = min(ys + bh, h), min(xs + bw, w)
        if sy < ey and sx < ex:
            out[b, :, sy - ys:ey - ys, sx - xs:ex - xs] = arr[i, sy:ey, sx:ex, :].transpose(2, 0, 1)
    return GatheredBlocks(Tensor4D(out, Layout.CHANNELS_FIRST), spec, idx)


def in_bounds_map(idx: BlockIndexList, spec: BlockSpec) -> np.ndarray:
    """Boolean (B, bh, bw) map of block positions that read real input pixels
    (False where gather zero-filled an out-of-bounds halo read)."""
    h, w = spec.input_size
    bh, bw = spec.block_size
    isy, isx = spec.in_stride
    y0, x0 = spec.grid_origin
    out = np.zeros((idx.count, bh, bw), bool)
    for b, (_, by, bx) in enumerate(idx.entries):
        ys = y0 + by * isy
        xs = x0 + bx * isx
        sy, sx = max(ys, 0), max(xs, 0)
        ey, ex = min(ys + bh, h), min(xs + bw, w)
        if sy < ey and sx < ex:
            out[b, sy - ys:ey - ys, sx - xs:ex - xs] = True
    return out


def _check_scatter(blocks: GatheredBlocks, out_spec: BlockSpec) -> None:
    if blocks.spec != out_spec:
        raise GeometryError("block source geometry does not match scatter geometry")
    bdims = blocks.tensor.dims
    if (bdims[1], bdims[2]) != out_spec.out_block_size:
        raise ShapeMismatchError(
            f"block spatial dims {(bdims[1], bdims[2])} != output block size {out_spec.out_block_size}"
        )


def _scatter_impl(blocks: GatheredBlocks, out_spec: BlockSpec, dst: Tensor4D, add: bool) -> Tensor4D:
    _check_scatter(blocks, out_spec)
    n, oh, ow, c = dst.dims
    if (oh, ow) != out_spec.out_size:
        raise ShapeMismatchError(f"destination spatial dims {(oh, ow)} != conv output {out_spec.out_size}")
    if c != blocks.tensor.dims[3]:
        raise ShapeMismatchError(f"destination channels {c} != block channels {blocks.tensor.dims[3]}")
    obh, obw = out_spec.out_block_size
    blk = blocks.tensor.nhwc()
    out = dst.nhwc().copy()
    for b, (i, by, bx) in enumerate(blocks.indices.entries):
        ys, xs = by * obh, bx * obw
        ey, ex = min(ys + obh, oh), min(xs + obw, ow)
        if add:
            out[i, ys:ey, xs:ex, :] += blk[b, :ey - ys, :ex - xs, :]
        else:
            out[i, ys:ey, xs:ex, :] = blk[b, :ey - ys, :ex - xs, :]
    return Tensor4D.from_nhwc(out, dst.layout)


def scatter(blocks: GatheredBlocks, out_spec: BlockSpec, dst: Tensor4D) -> Tensor4D:
    """Write each block to its disjoint output window; unwritten elements keep dst values."""
    return _scatter_impl(blocks, out_spec, dst, add=False)


def scatter_add(blocks: GatheredBlocks, out_spec: BlockSpec, dst: Tensor4D) -> Tensor4D:
    """As scatter but accumulates into dst; used for residual shortcuts and gather's adjoint."""
    return _scatter_impl(blocks, out_spec, dst, add=True)


def scatter_transpose(blocks: GatheredBlocks, out_spec: BlockSpec, dst: Tensor4D) -> Tensor4D:
    """Scatter ChannelsFirst blocks into a ChannelsLast destination in one pass."""
    if blocks.tensor.layout is not Layout.CHANNELS_FIRST:
        raise GeometryError("scatter_transpose expects ChannelsFirst blocks")
    return _scatter_impl(blocks, out_spec, dst, add=False)


def gather_grad(g_blocks: GatheredBlocks, spec: BlockSpec, dst_dims: tuple[int, int, int, int],
                dtype=None) -> Tensor4D:
    """Adjoint of gather: scatter-add block gradients over their (overlapping) input windows.

    Blocks are accumulated in index order, giving a canonical deterministic result.
    """
    if g_blocks.spec != spec:
        raise GeometryError("gradient block geometry does not match spec")
    n, h, w, c = dst_dims
    if (h, w) != spec.input_size:
        raise ShapeMismatchError(f"destination spatial dims {(h, w)} != spec input size {spec.input_size}")
    bh, bw = spec.block_size
    bdims = g_blocks.tensor.dims
    if (bdims[1], bdims[2]) != (bh, bw):
        raise ShapeMismatchError(f"gradient block dims {(bdims[1], bdims[2])} != block size {(bh, bw)}")
    isy, isx = spec.in_stride
    y0, x0 = spec.grid_origin
    blk = g_blocks.tensor.nhwc()
    out = np.zeros((n, h, w, c), dtype=dtype or blk.dtype)
    for b, (i, by, bx) in enumerate(g_blocks.indices.entries):
        ys = y0 + by * isy
        xs = x0 + bx * isx
        sy, sx = max(ys, 0), max(xs, 0)
        ey, ex = min(ys + bh, h), min(xs + bw, w)
        if sy < ey and sx < ex:
            out[i, sy:ey, sx:ex, :] += blk[b, sy - ys:ey - ys, sx - xs:ex - xs, :]
    return Tensor4D(out)


def scatter_grad(g_out: Tensor4D, idx: BlockIndexList, out_spec: BlockSpec) -> GatheredBlocks:
    """Adjoint of scatter: gather the dense upstream gradient over the disjoint write grid."""
    n, oh, ow, c = g_out.dims
    if (oh, ow) != out_spec.out_size:
        raise ShapeMismatchError(f"gradient spatial dims {(oh, ow)} != conv output {out_spec.out_size}")
    _check_indices(idx, out_spec, n)
    obh, obw = out_spec.out_block_size
    arr = g_out.nhwc()
    out = np.zeros((idx.count, obh, obw, c), dtype=g_out.dtype)
    for b, (i, by, bx) in enumerate(idx.entries):
        ys, xs = by * obh, bx * obw
        ey, ex = min(ys + obh, oh), min(xs + obw, ow)
        out[b, :ey - ys, :ex - xs, :] = arr[i, ys:ey, xs:ex, :]
    return GatheredBlocks(Tensor4D(out), out_spec, idx)
