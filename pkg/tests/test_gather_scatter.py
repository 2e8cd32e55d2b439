import numpy as np
import pytest

from blockconv import (BinaryMask, BlockIndexList, ConvParams, Layout, Padding, Tensor4D,
                       compute_block_spec, gather, gather_grad, gather_transpose, reduce_mask,
                       scatter, scatter_add, scatter_grad, scatter_transpose, transpose_layout)
from blockconv.errors import GeometryError, ShapeMismatchError
from blockconv.verify import check_adjoint_identity
from oracles import write_count_map


def _spec(dims, kernel=(1, 1), stride=(1, 1), padding=Padding.VALID, block=(4, 4)):
    return compute_block_spec(dims, ConvParams(kernel, stride, padding, 1), block)


def test_single_full_tensor_block():
    rng = np.random.default_rng(0)
    x = Tensor4D(rng.standard_normal((1, 6, 8, 2)).astype(np.float32))
    spec = _spec(x.dims, block=(6, 8))
    g = gather(x, BlockIndexList(np.array([[0, 0, 0]])), spec)
    assert g.tensor.dims == (1, 6, 8, 2)
    assert np.array_equal(g.tensor.nhwc()[0], x.nhwc()[0])


def test_gather_index_arithmetic():
    vals = np.zeros((1, 8, 8, 1), np.float32)
    for y in range(8):
        for x in range(8):
            vals[0, y, x, 0] = 100 * y + x
    t = Tensor4D(vals)
    spec = _spec(t.dims, block=(4, 4))
    assert spec.in_stride == (4, 4)
    g = gather(t, BlockIndexList(np.array([[0, 1, 1]])), spec)
    blk = g.tensor.nhwc()[0, :, :, 0]
    expect = np.array([[100 * y + x for x in range(4, 8)] for y in range(4, 8)], np.float32)
    assert np.array_equal(blk, expect)
    assert blk[0, 0] == 404.0 and blk[3, 3] == 707.0


def test_gather_empty_index_list():
    x = Tensor4D(np.ones((1, 8, 8, 3), np.float32))
    g = gather(x, BlockIndexList(np.zeros((0, 3))), _spec(x.dims))
    assert g.count == 0
    assert g.tensor.dims[0] == 0


def test_gather_zero_fills_out_of_bounds_halo():
    x = Tensor4D(np.ones((1, 6, 6, 1), np.float32))
    spec = _spec(x.dims, kernel=(3, 3), padding=Padding.SAME, block=(4, 4))
    assert spec.grid_origin == (-1, -1)
    g = gather(x, BlockIndexList(np.array([[0, 0, 0]])), spec)
    blk = g.tensor.nhwc()[0, :, :, 0]
    assert np.all(blk[0, :] == 0) and np.all(blk[:, 0] == 0)
    assert np.all(blk[1:, 1:] == 1)


def test_gather_rejects_out_of_grid_index():
    x = Tensor4D(np.ones((1, 8, 8, 1), np.float32))
    spec = _spec(x.dims)
    with pytest.raises(GeometryError):
        gather(x, BlockIndexList(np.array([[0, 9, 0]])), spec)


def test_scatter_inverts_gather_for_overlap_free_grid():
    rng = np.random.default_rng(1)
    x = Tensor4D(rng.standard_normal((2, 8, 12, 3)).astype(np.float32))
    spec = _spec(x.dims, block=(4, 4))
    idx = reduce_mask(BinaryMask.full(2, 8, 12), spec)
    g = gather(x, idx, spec)
    out = scatter(g, spec, Tensor4D(np.zeros(x.nhwc().shape, np.float32)))
    assert np.array_equal(out.data, x.data)


def test_scatter_empty_block_list_leaves_destination():
    spec = _spec((1, 8, 8, 2))
    dst = Tensor4D(np.full((1, 8, 8, 2), 5.0, np.float32))
    g = gather(Tensor4D(np.ones((1, 8, 8, 2), np.float32)), BlockIndexList(np.zeros((0, 3))), spec)
    out = scatter(g, spec, dst)
    assert np.array_equal(out.data, dst.data)


def test_adjacent_blocks_write_disjoint_abutting_rectangles():
    spec = _spec((1, 8, 8, 1), block=(4, 4))
    idx = BlockIndexList(np.array([[0, 0, 0], [0, 0, 1]]))
    counts = write_count_map(spec, idx, 1)
    assert counts.max() == 1  # no double-writes
    blocks = gather(Tensor4D(np.zeros((1, 8, 8, 1), np.float32)), idx, spec).with_tensor(
        Tensor4D(np.stack([np.full((4, 4, 1), v, np.float32) for v in (2.0, 3.0)])))
    out = scatter(blocks, spec, Tensor4D(np.zeros((1, 8, 8, 1), np.float32))).nhwc()[0, :, :, 0]
    assert np.all(out[:4, :4] == 2.0)
    assert np.all(out[:4, 4:] == 3.0)
    assert np.all(out[4:, :] == 0.0)


def test_scatter_add_onto_zeros_equals_scatter():
    rng = np.random.default_rng(2)
    x = Tensor4D(rng.standard_normal((1, 8, 8, 2)).astype(np.float32))
    spec = _spec(x.dims)
    idx = BlockIndexList(np.array([[0, 0, 1], [0, 1, 0]]))
    g = gather(x, idx, spec)
    zeros = Tensor4D(np.zeros((1, 8, 8, 2), np.float32))
    assert np.array_equal(scatter_add(g, spec, zeros).data, scatter(g, spec, zeros).data)


def test_scatter_add_accumulates():
    spec = _spec((1, 8, 8, 1))
    idx = BlockIndexList(np.array([[0, 0, 0]]))
    blocks = gather(Tensor4D(np.ones((1, 8, 8, 1), np.float32)), idx, spec)
    dst = Tensor4D(np.ones((1, 8, 8, 1), np.float32))
    out = scatter_add(blocks, spec, dst).nhwc()[0, :, :, 0]
    assert np.all(out[:4, :4] == 2.0)
    assert np.all(out[4:, :] == 1.0) and np.all(out[:4, 4:] == 1.0)


def test_scatter_rejects_mismatched_geometry():
    x = Tensor4D(np.ones((1, 8, 8, 1), np.float32))
    spec = _spec(x.dims)
    other = _spec((1, 12, 12, 1))
    g = gather(x, BlockIndexList(np.array([[0, 0, 0]])), spec)
    with pytest.raises(GeometryError):
        scatter(g, other, Tensor4D(np.zeros((1, 12, 12, 1), np.float32)))
    with pytest.raises(ShapeMismatchError):
        scatter(g, spec, Tensor4D(np.zeros((1, 9, 8, 1), np.float32)))


def test_fused_gather_transpose_matches_composition():
    rng = np.random.default_rng(3)
    for case in range(10):
        h, w, c = int(rng.integers(6, 20)), int(rng.integers(6, 20)), int(rng.integers(1, 6))
        x = Tensor4D(rng.standard_normal((1, h, w, c)).astype(np.float32))
        spec = _spec(x.dims, kernel=(3, 3), padding=Padding.SAME, block=(5, 5))
        idx = reduce_mask(BinaryMask.full(1, h, w), spec)
        fused = gather_transpose(x, idx, spec)
        composed = transpose_layout(gather(x, idx, spec).tensor)
        assert fused.tensor.layout is Layout.CHANNELS_FIRST
        assert np.array_equal(fused.tensor.data, composed.data)


def test_fused_gather_transpose_empty_list():
    x = Tensor4D(np.ones((1, 8, 8, 2), np.float32))
    g = gather_transpose(x, BlockIndexList(np.zeros((0, 3))), _spec(x.dims))
    assert g.count == 0
    assert g.tensor.layout is Layout.CHANNELS_FIRST


def test_fused_transpose_roundtrip_reproduces_input():
    rng = np.random.default_rng(4)
    x = Tensor4D(rng.standard_normal((1, 8, 8, 3)).astype(np.float32))
    spec = _spec(x.dims, block=(4, 4))  # overlap 0
    idx = reduce_mask(BinaryMask.full(1, 8, 8), spec)
    g = gather_transpose(x, idx, spec)
    out = scatter_transpose(g, spec, Tensor4D(np.zeros((1, 8, 8, 3), np.float32)))
    assert np.array_equal(out.nhwc(), x.nhwc())


def test_gather_grad_disjoint_blocks_copy_verbatim():
    spec = _spec((1, 8, 8, 1), block=(4, 4))
    idx = BlockIndexList(np.array([[0, 0, 0], [0, 1, 1]]))
    rng = np.random.default_rng(5)
    gblk = Tensor4D(rng.standard_normal((2, 4, 4, 1)))
    g = gather(Tensor4D(np.zeros((1, 8, 8, 1))), idx, spec).with_tensor(gblk)
    out = gather_grad(g, spec, (1, 8, 8, 1)).nhwc()
    assert np.array_equal(out[0, :4, :4, :], gblk.nhwc()[0])
    assert np.array_equal(out[0, 4:, 4:, :], gblk.nhwc()[1])
    assert np.all(out[0, :4, 4:, :] == 0)


def test_gather_grad_overlap_column_accumulates():
    # blocks at grid x 0 and 1 share one input column (overlap 1)
    spec = _spec((1, 4, 7, 1), kernel=(2, 2), stride=(1, 1), block=(4, 4))
    assert spec.overlap == (1, 1) and spec.in_stride == (3, 3)
    idx = BlockIndexList(np.array([[0, 0, 0], [0, 0, 1]]))
    ones = Tensor4D(np.ones((2, 4, 4, 1)))
    g = gather(Tensor4D(np.zeros((1, 4, 7, 1))), idx, spec).with_tensor(ones)
    out = gather_grad(g, spec, (1, 4, 7, 1)).nhwc()[0, :, :, 0]
    assert np.all(out[:, 3] == 2.0)  # shared column
    assert np.all(out[:, :3] == 1.0) and np.all(out[:, 4:] == 1.0)

    # same fact via central differences on sum(gather(x))
    x_arr = np.zeros((1, 4, 7, 1))
    eps = 1e-6
    fd = np.zeros_like(x_arr)
    for pos in np.ndindex(*x_arr.shape):
        x_arr[pos] = eps
        hi = gather(Tensor4D(x_arr), idx, spec).tensor.data.sum()
        x_arr[pos] = -eps
        lo = gather(Tensor4D(x_arr), idx, spec).tensor.data.sum()
        x_arr[pos] = 0.0
        fd[pos] = (hi - lo) / (2 * eps)
    assert np.abs(fd[0, :, :, 0] - out).max() <= 1e-6


def test_scatter_grad_of_ones_is_ones_blocks():
    spec = _spec((1, 8, 8, 2), block=(4, 4))
    idx = BlockIndexList(np.array([[0, 0, 0], [0, 1, 1]]))
    g = scatter_grad(Tensor4D(np.ones((1, 8, 8, 2))), idx, spec)
    assert np.array_equal(g.tensor.data, np.ones((2, 4, 4, 2)))


def test_adjoint_identity_random_geometries():
    assert check_adjoint_identity(seed=9, rounds=30) == 0.0
