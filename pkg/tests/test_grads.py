import numpy as np

from blockconv import (BinaryMask, ConvParams, FilterBank, Padding, Tensor4D, compute_block_spec,
                       reduce_mask, sparse_conv2d_grads)
from blockconv.verify import _active_region, check_gradients, random_mask


def test_identity_filter_input_gradient_is_active_region_indicator():
    rng = np.random.default_rng(0)
    n, h, w = 1, 16, 16
    x = Tensor4D(rng.standard_normal((n, h, w, 1)))
    f = FilterBank(np.ones((1, 1, 1, 1)))
    p = ConvParams((1, 1), (1, 1), Padding.VALID, 1)
    mask = random_mask(rng, n, h, w, "0.25")
    spec = compute_block_spec(x.dims, p, (4, 4))
    idx = reduce_mask(mask, spec)
    g_out = Tensor4D(np.ones((n, h, w, 1)))
    dx, dw, db = sparse_conv2d_grads(x, mask, f, p, (4, 4), g_out)
    region = _active_region(spec, idx, n)
    assert np.array_equal(dx.nhwc()[..., 0], region.astype(np.float64))
    assert db.item() == float(region.sum())


def test_zero_mask_gives_zero_gradients():
    rng = np.random.default_rng(1)
    x = Tensor4D(rng.standard_normal((1, 12, 12, 2)))
    f = FilterBank(rng.standard_normal((3, 3, 2, 2)), rng.standard_normal(2))
    p = ConvParams((3, 3), (1, 1), Padding.SAME, 2)
    g_out = Tensor4D(rng.standard_normal((1, 12, 12, 2)))
    dx, dw, db = sparse_conv2d_grads(x, BinaryMask.empty(1, 12, 12), f, p, (6, 6), g_out)
    assert not dx.data.any()
    assert not dw.any() and not db.any()


def test_gradients_match_central_differences():
    assert check_gradients(seed=17, rounds=4) <= 1e-5
