"""Reference dense kernels: direct convolution, batch norm, ReLU, pooling.

These run per gathered block in the sparse path and double as the correctness
oracle for it. Same-padding is realized by virtual zero-fill reads: kernel taps
that fall outside the input are skipped instead of materializing a padded copy.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeMismatchError
from .tensor import Layout, Tensor4D


class Padding(Enum):
    VALID = "valid"
    SAME = "same"


class BnMode(Enum):
    INFERENCE = "inference"
    TRAIN_STATS = "train_stats"


class PoolMode(Enum):
    MAX = "max"
    AVG = "avg"


@dataclass(frozen=True)
class ConvParams:
    kernel: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    padding: Padding = Padding.VALID
    filter_count: int = 1

    def __post_init__(self):
        kh, kw = self.kernel
        sh, sw = self.stride
        if kh < 1 or kw < 1:
            raise ShapeMismatchError(f"kernel must be >= 1, got {self.kernel}")
        if sh < 1 or sw < 1:
            raise ShapeMismatchError(f"stride must be >= 1, got {self.stride}")
        # stride <= kernel keeps block tilings gap-free
        if sh > kh or sw > kw:
            raise ShapeMismatchError(f"stride {self.stride} exceeds kernel {self.kernel}")

    @property
    def pad(self) -> tuple[int, int]:
        if self.padding is Padding.SAME:
            return (self.kernel[0] // 2, self.kernel[1] // 2)
        return (0, 0)

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.pad
        if self.padding is Padding.VALID and (h < kh or w < kw):
            raise ShapeMismatchError(f"input {h}x{w} smaller than kernel {kh}x{kw} under valid padding")
        return ((h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1)


@dataclass(frozen=True)
class FilterBank:
    weights: np.ndarray              # (kh, kw, c_in, c_out)
    bias: np.ndarray | None = None   # (c_out,)

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeMismatchError(f"filter weights must be 4-d, got {self.weights.ndim}-d")
        if self.bias is not None and self.bias.shape != (self.weights.shape[3],):
            raise ShapeMismatchError(
                f"bias length {self.bias.shape} does not match filter count {self.weights.shape[3]}"
            )

    @property
    def c_in(self) -> int:
        return self.weights.shape[2]

    @property
    def c_out(self) -> int:
        return self.weights.shape[3]


@dataclass(frozen=True)
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        c = self.gamma.shape
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != c:
                raise ShapeMismatchError(f"bn {name} shape {getattr(self, name).shape} != gamma shape {c}")
        if np.any(self.running_var < 0):
            raise ShapeMismatchError("bn running_var must be >= 0")
        if self.epsilon <= 0:
            raise ShapeMismatchError("bn epsilon must be > 0")

    @classmethod
    def identity(cls, c: int, dtype=np.float32) -> "BnParams":
        return cls(
            gamma=np.ones(c, dtype),
            beta=np.zeros(c, dtype),
            running_mean=np.zeros(c, dtype),
            running_var=np.ones(c, dtype),
        )


def _check_conv_shapes(x: Tensor4D, f: FilterBank, p: ConvParams) -> None:
    n, h, w, c = x.dims
    kh, kw = p.kernel
    if f.weights.shape[0] != kh or f.weights.shape[1] != kw:
        raise ShapeMismatchError(
            f"filter spatial dims {f.weights.shape[:2]} do not match kernel {p.kernel}"
        )
    if f.c_in != c:
        raise ShapeMismatchError(f"input channels {c} != filter c_in {f.c_in}")
    if f.c_out != p.filter_count:
        raise ShapeMismatchError(f"filter_count {p.filter_count} != filter bank c_out {f.c_out}")
    p.out_size(h, w)  # raises on undersized valid input


def conv2d_nhwc(arr: np.ndarray, weights: np.ndarray, bias: np.ndarray | None,
                stride: tuple[int, int], pad: tuple[int, int]) -> np.ndarray:
    """Direct convolution on a plain (n, h, w, c) array.

    Accumulates one GEMM per kernel tap; taps reaching outside the input are
    clipped to the valid output range, which is equivalent to zero padding.
    """
    n, h, w, c = arr.shape
    kh, kw, _, c_out = weights.shape
    sh, sw = stride
    ph, pw = pad
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((n, oh, ow, c_out), dtype=arr.dtype)
    wts = weights.astype(arr.dtype, copy=False)
    for i in range(kh):
        # output rows o with 0 <= o*sh + i - ph < h
        o_lo = max(0, -(-(ph - i) // sh))
        o_hi = min(oh - 1, (h - 1 - i + ph) // sh)
        if o_lo > o_hi:
            continue
        y0 = o_lo * sh + i - ph
        y1 = o_hi * sh + i - ph + 1
        for j in range(kw):
            q_lo = max(0, -(-(pw - j) // sw))
            q_hi = min(ow - 1, (w - 1 - j + pw) // sw)
            if q_lo > q_hi:
                continue
            x0 = q_lo * sw + j - pw
            x1 = q_hi * sw + j - pw + 1
            patch = arr[:, y0:y1:sh, x0:x1:sw, :]
            out[:, o_lo:o_hi + 1, q_lo:q_hi + 1, :] += patch @ wts[i, j]
    if bias is not None:
        out += bias.astype(arr.dtype, copy=False)
    return out


def conv2d_grads_nhwc(arr: np.ndarray, weights: np.ndarray, stride: tuple[int, int],
                      pad: tuple[int, int], g_out: np.ndarray):
    """Input/weight/bias gradients of conv2d_nhwc for upstream gradient g_out."""
    n, h, w, c = arr.shape
    kh, kw, _, c_out = weights.shape
    sh, sw = stride
    ph, pw = pad
    oh, ow = g_out.shape[1], g_out.shape[2]
    dx = np.zeros_like(arr)
    dw = np.zeros_like(weights, dtype=arr.dtype)
    wts = weights.astype(arr.dtype, copy=False)
    for i in range(kh):
        o_lo = max(0, -(-(ph - i) // sh))
        o_hi = min(oh - 1, (h - 1 - i + ph) // sh)
        if o_lo > o_hi:
            continue
        y0 = o_lo * sh + i - ph
        y1 = o_hi * sh + i - ph + 1
        for j in range(kw):
            q_lo = max(0, -(-(pw - j) // sw))
            q_hi = min(ow - 1, (w - 1 - j + pw) // sw)
            if q_lo > q_hi:
                continue
            x0 = q_lo * sw + j - pw
            x1 = q_hi * sw + j - pw + 1
            patch = arr[:, y0:y1:sh, x0:x1:sw, :]
            g = g_out[:, o_lo:o_hi + 1, q_lo:q_hi + 1, :]
            dw[i, j] = np.einsum("nyxc,nyxk->ck", patch, g)
            dx[:, y0:y1:sh, x0:x1:sw, :] += g @ wts[i, j].T
    db = g_out.sum(axis=(0, 1, 2))
    return dx, dw, db


def conv2d_direct(x: Tensor4D, f: FilterBank, p: ConvParams) -> Tensor4D:
    """Dense 2-d convolution; serves as the oracle for every sparse path."""
    _check_conv_shapes(x, f, p)
    out = conv2d_nhwc(x.nhwc(), f.weights, f.bias, p.stride, p.pad)
    return Tensor4D.from_nhwc(out, x.layout)


def conv2d_direct_grads(x: Tensor4D, f: FilterBank, p: ConvParams, g_out: Tensor4D):
    _check_conv_shapes(x, f, p)
    dx, dw, db = conv2d_grads_nhwc(x.nhwc(), f.weights, p.stride, p.pad, g_out.nhwc())
    return Tensor4D.from_nhwc(dx, x.layout), dw, db


def bn_inference_nhwc(arr: np.ndarray, bn: BnParams) -> np.ndarray:
    scale = (bn.gamma / np.sqrt(bn.running_var + bn.epsilon)).astype(arr.dtype)
    shift = (bn.beta - bn.running_mean * bn.gamma / np.sqrt(bn.running_var + bn.epsilon)).astype(arr.dtype)
    return arr * scale + shift


def batch_norm(x: Tensor4D, bn: BnParams, mode: BnMode = BnMode.INFERENCE):
    """Per-channel batch norm. TRAIN_STATS returns (tensor, (mean, var)) over all n*h*w positions."""
    arr = x.nhwc()
    if bn.gamma.shape[0] != arr.shape[3]:
        raise ShapeMismatchError(f"bn channels {bn.gamma.shape[0]} != tensor channels {arr.shape[3]}")
    if mode is BnMode.INFERENCE:
        return Tensor4D.from_nhwc(bn_inference_nhwc(arr, bn), x.layout)
    mean = arr.mean(axis=(0, 1, 2))
    var = arr.var(axis=(0, 1, 2))
    scale = (bn.gamma / np.sqrt(var + bn.epsilon)).astype(arr.dtype)
    out = (arr - mean.astype(arr.dtype)) * scale + bn.beta.astype(arr.dtype)
    return Tensor4D.from_nhwc(out, x.layout), (mean, var)


def relu(x: Tensor4D) -> Tensor4D:
    return Tensor4D(np.maximum(x.data, 0), x.layout)


def pool2d(x: Tensor4D, window: int | tuple[int, int], stride: int | tuple[int, int] | None = None,
           mode: PoolMode = PoolMode.MAX) -> Tensor4D:
    """Valid-semantics pooling over full windows only."""
    wh, ww = (window, window) if isinstance(window, int) else window
    if stride is None:
        stride = (wh, ww)
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    arr = x.nhwc()
    n, h, w, c = arr.shape
    if wh > h or ww > w:
        raise ShapeMismatchError(f"pool window {wh}x{ww} larger than input {h}x{w}")
    view = np.lib.stride_tricks.sliding_window_view(arr, (wh, ww), axis=(1, 2))
    view = view[:, ::sh, ::sw]  # (n, oh, ow, c, wh, ww)
    if mode is PoolMode.MAX:
        out = view.max(axis=(4, 5))
    else:
        out = view.mean(axis=(4, 5))
    return Tensor4D.from_nhwc(np.ascontiguousarray(out), x.layout)


def conv2d(x: Tensor4D, f: FilterBank, p: ConvParams, algo: str = "auto") -> Tensor4D:
    """Algorithm dispatcher: picks Winograd for eligible 3x3/stride-1 configs."""
    from .winograd import conv2d_winograd, winograd_supported

    if algo == "direct":
        return conv2d_direct(x, f, p)
    if algo == "winograd":
        return conv2d_winograd(x, f, p)
    if algo == "auto":
        if winograd_supported(p):
            return conv2d_winograd(x, f, p)
        return conv2d_direct(x, f, p)
    raise ValueError(f"unknown algo {algo!r}")
