"""Seeded invariant suite: dense equivalence, tiling coverage, adjoints, Winograd,
gradient checks. Shared by the `verify` CLI command and the acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import gather, gather_grad, scatter, scatter_grad
from .errors import CoverageError, GeometryError
from .layers import (dense_residual_unit, random_unit_params, sparse_conv2d,
                     sparse_conv2d_grads, sparse_residual_unit, sparse_residual_unit_grads)
from .ops import BnMode, ConvParams, FilterBank, Padding, conv2d_direct
from .tensor import Tensor4D
from .tiling import (BinaryMask, BlockIndexList, compute_block_spec, coverage_check,
                     reduce_mask)
from .winograd import conv2d_winograd


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max absolute difference scaled by the reference magnitude."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.size == 0:
        return 0.0
    denom = max(np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / denom)


def random_mask(rng: np.random.Generator, n: int, h: int, w: int, kind: str) -> BinaryMask:
    if kind == "full":
        return BinaryMask.full(n, h, w)
    if kind == "empty":
        return BinaryMask.empty(n, h, w)
    if kind == "single":
        m = np.zeros((n, h, w), np.uint8)
        for i in range(n):
            m[i, rng.integers(h), rng.integers(w)] = 1
        return BinaryMask(m)
    # blob: coarse bernoulli grid upsampled, active fraction ~ kind value
    p = float(kind)
    coarse = rng.random((n, -(-h // 4), -(-w // 4))) < p
    fine = coarse.repeat(4, axis=1).repeat(4, axis=2)[:, :h, :w]
    return BinaryMask(fine.astype(np.uint8))


_MASK_KINDS = ["full", "empty", "single", "0.25", "0.5", "0.75", "0.9"]


def _active_region(spec, idx, n: int) -> np.ndarray:
    """Boolean (n, oh, ow) map of output pixels inside active write regions."""
    oh, ow = spec.out_size
    obh, obw = spec.out_block_size
    region = np.zeros((n, oh, ow), bool)
    for i, by, bx in idx.entries:
        region[i, by * obh:min((by + 1) * obh, oh), bx * obw:min((bx + 1) * obw, ow)] = True
    return region


def _random_conv_config(rng: np.random.Generator):
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 9))
    c_out = int(rng.integers(1, 9))
    kh = int(rng.choice([1, 3, 3, 5]))
    kw = int(rng.choice([1, 3, 3, 5]))
    sh = int(rng.choice([1, 1, 1, 2])) if kh > 1 else 1
    sw = int(rng.choice([1, 1, 1, 2])) if kw > 1 else 1
    h = int(rng.integers(max(kh, 6), 49))
    w = int(rng.integers(max(kw, 6), 49))
    padding = Padding.SAME if rng.random() < 0.5 else Padding.VALID
    conv = ConvParams((kh, kw), (sh, sw), padding, c_out)
    # block size compatible with the stride-divisibility tiling constraint
    bh = kh + sh * int(rng.integers(1, 14))
    bw = kw + sw * int(rng.integers(1, 14))
    bh, bw = min(bh, kh + sh * 13), min(bw, kw + sw * 13)
    return n, h, w, c, conv, (bh, bw)


def check_sparse_conv_equivalence(seed: int = 0, rounds: int = 50, dtype=np.float32) -> float:
    """sparse_conv2d vs conv2d_direct on all active write regions."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for r in range(rounds):
        n, h, w, c, conv, block = _random_conv_config(rng)
        mask = random_mask(rng, n, h, w, _MASK_KINDS[r % len(_MASK_KINDS)])
        x = Tensor4D(rng.standard_normal((n, h, w, c)).astype(dtype))
        f = FilterBank(rng.standard_normal((*conv.kernel, c, conv.filter_count)).astype(dtype),
                       rng.standard_normal(conv.filter_count).astype(dtype))
        spec = compute_block_spec(x.dims, conv, block)
        idx = reduce_mask(mask, spec)
        sparse = sparse_conv2d(x, mask, f, conv, block).nhwc()
        dense = conv2d_direct(x, f, conv).nhwc()
        region = _active_region(spec, idx, n)
        worst = max(worst, rel_err(sparse[region], dense[region]))
        # inactive pixels keep the zero-initialized destination
        if not np.all(sparse[~region] == 0):
            return float("inf")
    return worst


def check_residual_equivalence(seed: int = 0, rounds: int = 30, halo: int = 1,
                               dtype=np.float32) -> float:
    """sparse_residual_unit (inference BN) vs the dense unit on active regions;
    inactive pixels must pass through bit-identically."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for r in range(rounds):
        n = int(rng.integers(1, 3))
        c = int(rng.integers(2, 9))
        m = int(rng.integers(2, 9))
        h = int(rng.integers(8, 41))
        w = int(rng.integers(8, 41))
        bs = int(rng.integers(max(4, 2 * halo + 1), 17))
        mask = random_mask(rng, n, h, w, _MASK_KINDS[r % len(_MASK_KINDS)])
        x = Tensor4D(rng.standard_normal((n, h, w, c)).astype(dtype))
        u = random_unit_params(rng, c, m, dtype)
        conv_eff = ConvParams((2 * halo + 1,) * 2 if halo else (1, 1), (1, 1), Padding.SAME, c)
        spec = compute_block_spec(x.dims, conv_eff, (bs, bs))
        idx = reduce_mask(mask, spec)
        sparse = sparse_residual_unit(x, mask, u, (bs, bs), halo=halo).nhwc()
        dense = dense_residual_unit(x, u).nhwc()
        region = _active_region(spec, idx, n)
        worst = max(worst, rel_err(sparse[region], dense[region]))
        if not np.all(sparse[~region] == x.nhwc()[~region]):
            return float("inf")
    return worst


def check_tiling_coverage(seed: int = 0, rounds: int = 100) -> int:
    """Brute-force coverage/disjointness oracle over random (mask, BlockSpec) pairs.

    Returns the number of violations (0 when healthy)."""
    rng = np.random.default_rng(seed)
    violations = 0
    for r in range(rounds):
        n, h, w, c, conv, block = _random_conv_config(rng)
        h, w = min(h, 32), min(w, 32)
        mask = random_mask(rng, n, h, w, _MASK_KINDS[r % len(_MASK_KINDS)])
        spec = compute_block_spec((n, h, w, c), conv, block)
        idx = reduce_mask(mask, spec)
        try:
            report = coverage_check(mask, spec, idx)
            if report.covered_fraction != 1.0:
                violations += 1
        except CoverageError:
            violations += 1
    return violations


def check_adjoint_identity(seed: int = 0, rounds: int = 50) -> float:
    """<gather(x), g> == <x, gather_grad(g)> and the scatter counterpart, exactly
    in 64-bit on integer-valued tensors (products and sums stay exact)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(rounds):
        n, h, w, c, conv, block = _random_conv_config(rng)
        h, w, c = min(h, 24), min(w, 24), min(c, 4)
        mask = random_mask(rng, n, h, w, "0.5")
        x = Tensor4D(rng.integers(-8, 9, (n, h, w, c)).astype(np.float64))
        spec = compute_block_spec((n, h, w, c), conv, block)
        idx = reduce_mask(mask, spec)
        g = Tensor4D(rng.integers(-8, 9, (idx.count, *spec.block_size, c)).astype(np.float64))
        gathered = gather(x, idx, spec)
        lhs = float(np.vdot(gathered.tensor.data, g.data))
        back = gather_grad(gathered.with_tensor(g), spec, x.dims)
        rhs = float(np.vdot(x.data, back.data))
        worst = max(worst, abs(lhs - rhs))

        obh, obw = spec.out_block_size
        blocks = gathered.with_tensor(
            Tensor4D(rng.integers(-8, 9, (idx.count, obh, obw, c)).astype(np.float64)))
        gy = Tensor4D(rng.integers(-8, 9, (n, *spec.out_size, c)).astype(np.float64))
        zeros = Tensor4D(np.zeros((n, *spec.out_size, c)))
        lhs = float(np.vdot(scatter(blocks, spec, zeros).data, gy.data))
        rhs = float(np.vdot(blocks.tensor.data, scatter_grad(gy, idx, spec).tensor.data))
        worst = max(worst, abs(lhs - rhs))
    return worst


def check_winograd(seed: int = 0, rounds: int = 30, dtype=np.float32) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for r in range(rounds):
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 9))
        c_out = int(rng.integers(1, 9))
        h = int(rng.integers(4, 33))
        w = int(rng.integers(4, 33))
        padding = Padding.SAME if r % 2 else Padding.VALID
        conv = ConvParams((3, 3), (1, 1), padding, c_out)
        x = Tensor4D(rng.standard_normal((n, h, w, c)).astype(dtype))
        f = FilterBank(rng.standard_normal((3, 3, c, c_out)).astype(dtype),
                       rng.standard_normal(c_out).astype(dtype))
        worst = max(worst, rel_err(conv2d_winograd(x, f, conv).nhwc(),
                                   conv2d_direct(x, f, conv).nhwc()))
    return worst


def _fd_grad(loss_fn, arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar loss with respect to arr (64-bit)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = loss_fn()
        flat[i] = orig - eps
        lo = loss_fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def check_gradients(seed: int = 0, rounds: int = 6) -> float:
    """sparse_conv2d and sparse_residual_unit gradients vs central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for r in range(rounds):
        n = 1
        c = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 4))
        h = int(rng.integers(6, 11))
        w = int(rng.integers(6, 11))
        conv = ConvParams((3, 3), (1, 1), Padding.SAME, c_out)
        block = (int(rng.integers(4, 8)),) * 2
        mask = random_mask(rng, n, h, w, "0.5" if r % 2 else "full")
        x_arr = rng.standard_normal((n, h, w, c))
        w_arr = rng.standard_normal((3, 3, c, c_out))
        b_arr = rng.standard_normal(c_out)
        proj = rng.standard_normal((n, *ConvParams((3, 3), (1, 1), Padding.SAME, c_out).out_size(h, w), c_out))

        def loss():
            f = FilterBank(w_arr, b_arr)
            out = sparse_conv2d(Tensor4D(x_arr), mask, f, conv, block)
            return float(np.vdot(out.nhwc(), proj))

        g_out = Tensor4D(proj)
        dx, dw, db = sparse_conv2d_grads(Tensor4D(x_arr), mask, FilterBank(w_arr, b_arr),
                                         conv, block, g_out)
        worst = max(worst, rel_err(dx.nhwc(), _fd_grad(loss, x_arr)))
        worst = max(worst, rel_err(dw, _fd_grad(loss, w_arr)))
        worst = max(worst, rel_err(db, _fd_grad(loss, b_arr)))

        # residual unit input gradient
        m = int(rng.integers(1, 4))
        u = random_unit_params(rng, c, m, np.float64)
        bs = (int(rng.integers(4, 8)),) * 2
        proj_u = rng.standard_normal((n, h, w, c))

        def loss_u():
            out = sparse_residual_unit(Tensor4D(x_arr), mask, u, bs)
            return float(np.vdot(out.nhwc(), proj_u))

        dxu, dws = sparse_residual_unit_grads(Tensor4D(x_arr), mask, u, bs, Tensor4D(proj_u))
        worst = max(worst, rel_err(dxu.nhwc(), _fd_grad(loss_u, x_arr)))
        worst = max(worst, rel_err(dws["conv2"][0], _fd_grad(loss_u, u.conv2.weights)))
    return worst


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def run_verification(seed: int = 0, rounds: int = 25, halo: int = 1) -> list[CheckResult]:
    """Run every invariant check on seeded random configurations."""
    return [
        CheckResult("dense-equivalence/conv", check_sparse_conv_equivalence(seed, rounds), 1e-5),
        CheckResult("dense-equivalence/residual-unit",
                    check_residual_equivalence(seed + 1, rounds, halo), 1e-4),
        CheckResult("tiling-coverage", float(check_tiling_coverage(seed + 2, rounds * 2)), 0.0),
        CheckResult("adjoint-identity", check_adjoint_identity(seed + 3, rounds), 0.0),
        CheckResult("winograd-equivalence", check_winograd(seed + 4, rounds), 1e-4),
        CheckResult("gradient-checks", check_gradients(seed + 5, max(2, rounds // 5)), 1e-5),
    ]
