import numpy as np
import pytest

from blockconv import ConvParams, FilterBank, Padding, Tensor4D, conv2d_direct, conv2d_winograd
from blockconv.errors import UnsupportedConfigError
from blockconv.ops import conv2d
from blockconv.verify import check_winograd, rel_err


def test_identity_center_tap_filter():
    rng = np.random.default_rng(0)
    x = Tensor4D(rng.standard_normal((1, 16, 16, 1)).astype(np.float32))
    w = np.zeros((3, 3, 1, 1), np.float32)
    w[1, 1, 0, 0] = 1.0
    p = ConvParams((3, 3), (1, 1), Padding.VALID, 1)
    out = conv2d_winograd(x, FilterBank(w), p).nhwc()
    assert rel_err(out, x.nhwc()[:, 1:-1, 1:-1, :]) <= 1e-5


def test_random_matches_direct_conv():
    rng = np.random.default_rng(1)
    x = Tensor4D(rng.standard_normal((1, 16, 16, 8)).astype(np.float32))
    f = FilterBank(rng.standard_normal((3, 3, 8, 8)).astype(np.float32),
                   rng.standard_normal(8).astype(np.float32))
    for padding in (Padding.VALID, Padding.SAME):
        p = ConvParams((3, 3), (1, 1), padding, 8)
        err = rel_err(conv2d_winograd(x, f, p).nhwc(), conv2d_direct(x, f, p).nhwc())
        assert err <= 1e-4


def test_zero_input_gives_exact_zero():
    x = Tensor4D(np.zeros((1, 8, 8, 2), np.float32))
    f = FilterBank(np.ones((3, 3, 2, 3), np.float32))
    p = ConvParams((3, 3), (1, 1), Padding.SAME, 3)
    assert np.array_equal(conv2d_winograd(x, f, p).data, np.zeros((1, 8, 8, 3), np.float32))


def test_odd_output_extents_are_cropped_correctly():
    rng = np.random.default_rng(2)
    for h, w in [(5, 7), (9, 4), (11, 11)]:
        x = Tensor4D(rng.standard_normal((2, h, w, 3)).astype(np.float32))
        f = FilterBank(rng.standard_normal((3, 3, 3, 2)).astype(np.float32))
        p = ConvParams((3, 3), (1, 1), Padding.SAME, 2)
        err = rel_err(conv2d_winograd(x, f, p).nhwc(), conv2d_direct(x, f, p).nhwc())
        assert err <= 1e-4


def test_rejects_unsupported_configs():
    x = Tensor4D(np.zeros((1, 8, 8, 1), np.float32))
    f5 = FilterBank(np.zeros((5, 5, 1, 1), np.float32))
    with pytest.raises(UnsupportedConfigError):
        conv2d_winograd(x, f5, ConvParams((5, 5), (1, 1), Padding.VALID, 1))
    f3 = FilterBank(np.zeros((3, 3, 1, 1), np.float32))
    with pytest.raises(UnsupportedConfigError):
        conv2d_winograd(x, f3, ConvParams((3, 3), (2, 2), Padding.VALID, 1))


def test_dispatcher_routes_eligible_configs_to_winograd():
    rng = np.random.default_rng(3)
    x = Tensor4D(rng.standard_normal((1, 10, 10, 2)).astype(np.float32))
    f = FilterBank(rng.standard_normal((3, 3, 2, 2)).astype(np.float32))
    p = ConvParams((3, 3), (1, 1), Padding.SAME, 2)
    auto = conv2d(x, f, p, algo="auto")
    wino = conv2d(x, f, p, algo="winograd")
    assert np.array_equal(auto.data, wino.data)


def test_randomized_equivalence_sweep():
    assert check_winograd(seed=11, rounds=25) <= 1e-4
