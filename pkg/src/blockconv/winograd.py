"""Winograd F(2x2, 3x3) convolution: 2x2 output tiles from 4x4 input tiles."""
from __future__ import annotations

import numpy as np

from .errors import UnsupportedConfigError
from .ops import ConvParams, FilterBank, Padding, _check_conv_shapes
from .tensor import Tensor4D

# Standard F(2x2,3x3) transform matrices.
_BT = np.array([
    [1, 0, -1, 0],
    [0, 1, 1, 0],
    [0, -1, 1, 0],
    [0, 1, 0, -1],
], dtype=np.float64)
_G = np.array([
    [1, 0, 0],
    [0.5, 0.5, 0.5],
    [0.5, -0.5, 0.5],
    [0, 0, 1],
], dtype=np.float64)
_AT = np.array([
    [1, 1, 1, 0],
    [0, 1, -1, -1],
], dtype=np.float64)


def winograd_supported(p: ConvParams) -> bool:
    return p.kernel == (3, 3) and p.stride == (1, 1)


def transform_filters(weights: np.ndarray, dtype=np.float32) -> np.ndarray:
    """G g G^T per (c_in, c_out) pair -> (4, 4, c_in, c_out)."""
    g = _G.astype(dtype)
    return np.einsum("ai,bj,ijck->abck", g, g, weights.astype(dtype))


def conv2d_winograd(x: Tensor4D, f: FilterBank, p: ConvParams) -> Tensor4D:
    """Numerically equivalent to conv2d_direct for 3x3 kernels at stride 1.

    Odd output extents are handled by zero-padding the trailing tile and
    cropping the result.
    """
    if not winograd_supported(p):
        raise UnsupportedConfigError(
            f"Winograd path supports only 3x3 kernels at stride 1, got kernel {p.kernel} stride {p.stride}"
        )
    _check_conv_shapes(x, f, p)
    arr = x.nhwc()
    dtype = arr.dtype
    n, h, w, c = arr.shape
    ph, pw = p.pad
    oh, ow = p.out_size(h, w)
    th = -(-oh // 2)
    tw = -(-ow // 2)

    # Staging buffer: same-padding offset plus alignment to whole 4x4 tiles.
    buf = np.zeros((n, 2 * th + 2, 2 * tw + 2, c), dtype=dtype)
    buf[:, ph:ph + h, pw:pw + w, :] = arr

    d = np.empty((4, 4, n, th, tw, c), dtype=dtype)
    for a in range(4):
        for b in range(4):
            d[a, b] = buf[:, a:a + 2 * th:2, b:b + 2 * tw:2, :]

    bt = _BT.astype(dtype)
    at = _AT.astype(dtype)
    u = transform_filters(f.weights, dtype)

    v = np.tensordot(bt, d, axes=([1], [0]))                    # (a, j, ...)
    v = np.tensordot(bt, v, axes=([1], [1])).swapaxes(0, 1)     # (a, b, n, th, tw, c)
    m = np.einsum("abptqc,abck->abptqk", v, u)
    y = np.tensordot(at, m, axes=([1], [0]))                    # (a, b4, ...)
    y = np.tensordot(at, y, axes=([1], [1])).swapaxes(0, 1)     # (2, 2, n, th, tw, k)

    out = np.empty((n, 2 * th, 2 * tw, f.c_out), dtype=dtype)
    for a in range(2):
        for b in range(2):
            out[:, a::2, b::2, :] = y[a, b]
    out = out[:, :oh, :ow, :]
    if f.bias is not None:
        out = out + f.bias.astype(dtype)
    return Tensor4D.from_nhwc(np.ascontiguousarray(out), x.layout)
