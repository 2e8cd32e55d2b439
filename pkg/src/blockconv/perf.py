"""FLOP accounting, theoretical speedup model, synthetic masks, benchmarking, autotuning."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .ops import ConvParams, Padding
from .tensor import Tensor4D
from .tiling import BinaryMask, BlockIndexList, BlockSpec, compute_block_spec, reduce_mask

CSV_HEADER = ["config", "sparsity", "block_h", "block_w", "mean_ns", "std_ns", "min_ns",
              "flops_dense", "flops_sparse", "speedup"]


def theoretical_speedup(sparsity: float) -> float:
    """FLOP upper bound 1/(1 - sparsity), ignoring overlap and indexing overhead."""
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must be in [0, 1), got {sparsity}")
    return 1.0 / (1.0 - sparsity)


def flops_dense(dims, conv: ConvParams) -> int:
    """Multiply-add count (x2) of a dense convolution over (n, h, w, c) input."""
    n, h, w, c = dims
    oh, ow = conv.out_size(h, w)
    kh, kw = conv.kernel
    return 2 * n * oh * ow * kh * kw * c * conv.filter_count


@dataclass(frozen=True)
class FlopReport:
    dense_flops: int
    sparse_flops: int
    block_count: int
    overlap_overhead_ratio: float

    @property
    def speedup(self) -> float:
        if self.sparse_flops == 0:
            return math.inf
        return self.dense_flops / self.sparse_flops


def flops_sparse(spec: BlockSpec, idx: BlockIndexList, conv: ConvParams,
                 channels: tuple[int, int], batch: int = 1,
                 mask: BinaryMask | None = None) -> FlopReport:
    """Exact integer FLOP ledger for the blockwise path of one convolution."""
    c_in, c_out = channels
    kh, kw = conv.kernel
    obh, obw = spec.out_block_size
    bh, bw = spec.block_size
    per_block = 2 * obh * obw * kh * kw * c_in * c_out
    sparse = idx.count * per_block
    dense = flops_dense((batch, spec.input_size[0], spec.input_size[1], c_in), conv)
    block_area = idx.count * bh * bw
    if mask is not None and int(mask.data.sum()) > 0:
        ratio = block_area / int(mask.data.sum())
    elif idx.count > 0:
        ratio = (bh * bw) / (obh * obw)
    else:
        ratio = 1.0
    return FlopReport(dense, sparse, idx.count, ratio)


def flops_unit_dense(dims, channels: tuple[int, int]) -> int:
    """FLOPs of a dense bottleneck residual unit (1x1 c->m, 3x3 m->m same, 1x1 m->c)."""
    n, h, w, c = dims
    m = channels[1]
    return 2 * n * h * w * (c * m + 9 * m * m + m * c)


def flops_unit_sparse(spec: BlockSpec, idx: BlockIndexList, channels: tuple[int, int]) -> int:
    """FLOPs of the in-block bottleneck chain over all active blocks (halo 1)."""
    c, m = channels
    bh, bw = spec.block_size
    ih, iw = bh * bw, (bh - 2) * (bw - 2)
    per_block = 2 * (ih * c * m + iw * 9 * m * m + iw * m * c)
    return idx.count * per_block


def synth_mask_topleft(dims, sparsity: float) -> BinaryMask:
    """Axis-aligned active top-left rectangle whose aspect ratio matches the frame."""
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must be in [0, 1], got {sparsity}")
    n, h, w = dims
    area = round((1.0 - sparsity) * h * w)
    mask = np.zeros((n, h, w), np.uint8)
    if area > 0:
        ah = min(h, max(1, round(math.sqrt(area * h / w))))
        aw = min(w, max(1, round(area / ah)))
        mask[:, :ah, :aw] = 1
    return BinaryMask(mask)


def synth_mask_blobs(dims, target_sparsity: float, seed: int) -> BinaryMask:
    """Seeded random-disk mask grown until the active fraction is within 2% of target.

    Deterministic per seed; if the target cannot be reached within the iteration
    bound the mask is returned with whatever sparsity was achieved.
    """
    if not 0.0 <= target_sparsity <= 1.0:
        raise ValueError(f"target sparsity must be in [0, 1], got {target_sparsity}")
    n, h, w = dims
    rng = np.random.default_rng(seed)
    desired = (1.0 - target_sparsity) * h * w
    tol = 0.02 * h * w
    yy, xx = np.mgrid[0:h, 0:w]
    mask = np.zeros((n, h, w), np.uint8)
    for i in range(n):
        canvas = mask[i]
        for _ in range(5000):
            current = int(canvas.sum())
            remaining = desired - current
            if remaining <= tol:
                break
            r = max(1.0, math.sqrt(remaining / math.pi) * rng.uniform(0.3, 0.8))
            r = min(r, max(1.0, min(h, w) / 6))
            cy = rng.uniform(0, h)
            cx = rng.uniform(0, w)
            canvas[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 1
    return BinaryMask(mask)


@dataclass(frozen=True)
class BenchResult:
    warmup_iters: int
    timed_iters: int
    mean_ns: float
    std_ns: float
    min_ns: float
    config: dict = field(default_factory=dict)


def benchmark_layer(fn, warmup: int = 15, iters: int = 15, timer=None,
                    config: dict | None = None) -> BenchResult:
    """Warm up, then time fn() with a monotonic clock around the op only."""
    if timer is None:
        timer = time.perf_counter_ns
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(iters):
        t0 = timer()
        fn()
        t1 = timer()
        samples.append(t1 - t0)
    arr = np.asarray(samples, np.float64)
    return BenchResult(warmup, iters, float(arr.mean()), float(arr.std()), float(arr.min()),
                       dict(config or {}))


@dataclass(frozen=True)
class LayerConfig:
    """Description of the layer timed by the autotuner: one sparse convolution."""

    dims: tuple[int, int, int, int]   # (n, h, w, c)
    conv: ConvParams
    seed: int = 0
    dtype: type = np.float32


def autotune_block_size(layer: LayerConfig, mask: BinaryMask, candidates,
                        warmup: int = 15, iters: int = 15, timer=None):
    """Benchmark every candidate block size under one protocol and return
    (chosen, [(block_size, BenchResult), ...]); ties break toward smaller area."""
    from .layers import sparse_conv2d
    from .ops import FilterBank

    if not candidates:
        raise GeometryError("candidate list is empty")
    rng = np.random.default_rng(layer.seed)
    n, h, w, c = layer.dims
    x = Tensor4D(rng.standard_normal((n, h, w, c)).astype(layer.dtype))
    f = FilterBank(
        rng.standard_normal((*layer.conv.kernel, c, layer.conv.filter_count)).astype(layer.dtype))
    table = []
    for cand in candidates:
        cand = tuple(cand)
        try:
            compute_block_spec(layer.dims, layer.conv, cand)
        except GeometryError:
            continue
        res = benchmark_layer(lambda: sparse_conv2d(x, mask, f, layer.conv, cand),
                              warmup, iters, timer,
                              config={"block": cand, "dims": layer.dims})
        table.append((cand, res))
    if not table:
        raise GeometryError(f"no valid candidate block sizes among {list(candidates)}")
    chosen = min(table, key=lambda t: (t[1].mean_ns, t[0][0] * t[0][1]))[0]
    return chosen, table


@dataclass(frozen=True)
class BenchRow:
    """One CSV row of the benchmark report."""

    config: str
    sparsity: float
    block_h: int
    block_w: int
    mean_ns: float
    std_ns: float
    min_ns: float
    flops_dense: int
    flops_sparse: int
    speedup: float


def write_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow([r.config, repr(r.sparsity), r.block_h, r.block_w,
                             repr(r.mean_ns), repr(r.std_ns), repr(r.min_ns),
                             r.flops_dense, r.flops_sparse, repr(r.speedup)])


def read_csv(path) -> list[BenchRow]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        return [
            BenchRow(row[0], float(row[1]), int(row[2]), int(row[3]), float(row[4]),
                     float(row[5]), float(row[6]), int(row[7]), int(row[8]), float(row[9]))
            for row in reader
        ]


def format_table(rows) -> str:
    """Human-readable rendering of BenchRow records."""
    lines = ["  ".join(f"{h:>12}" for h in CSV_HEADER)]
    for r in rows:
        lines.append("  ".join([
            f"{r.config:>12}", f"{r.sparsity:>12.4f}", f"{r.block_h:>12d}", f"{r.block_w:>12d}",
            f"{r.mean_ns:>12.0f}", f"{r.std_ns:>12.0f}", f"{r.min_ns:>12.0f}",
            f"{r.flops_dense:>12d}", f"{r.flops_sparse:>12d}", f"{r.speedup:>12.3f}",
        ]))
    return "\n".join(lines)


DEFAULT_CANDIDATES = [(s, s) for s in (8, 16, 24, 32, 48, 64)]
