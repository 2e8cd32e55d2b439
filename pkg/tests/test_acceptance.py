"""Acceptance suite: one criterion per test, one printed PASS/FAIL line each.

Run with `pytest -v tests/test_acceptance.py` (add -s to see the lines inline).
"""
import time

import numpy as np

from blockconv import (BinaryMask, ConvParams, Padding, Tensor4D, compute_block_spec, gather,
                       gather_transpose, reduce_mask, scatter, scatter_transpose,
                       transpose_layout)
from blockconv.cli import demo_stage_configs, main
from blockconv.layers import (build_backbone, dense_residual_unit, random_unit_params,
                              run_backbone, sparse_residual_unit)
from blockconv.perf import (DEFAULT_CANDIDATES, LayerConfig, autotune_block_size,
                            benchmark_layer, flops_sparse, read_csv, synth_mask_topleft)
from blockconv.tensor import Layout
from blockconv.verify import (check_adjoint_identity, check_gradients,
                              check_residual_equivalence, check_sparse_conv_equivalence,
                              check_tiling_coverage, check_winograd)


def _report(name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


def test_a1_block_geometry_arithmetic():
    t0 = time.perf_counter()
    conv = ConvParams((3, 3), (2, 2), Padding.VALID, 1)
    spec = compute_block_spec((1, 64, 64, 1), conv, (5, 5))
    got = (spec.overlap, spec.in_stride, spec.out_block_size)
    ok = got == ((1, 1), (4, 4), (2, 2))
    ms = (time.perf_counter() - t0) * 1e3
    _report("block-geometry-arithmetic", ok and ms < 1.0,
            f"overlap/in_stride/out_block = {got}, {ms:.3f} ms")


def test_a2_dense_equivalence():
    conv_err = check_sparse_conv_equivalence(seed=0, rounds=200)
    unit_err = check_residual_equivalence(seed=1, rounds=50)
    ok = conv_err <= 1e-5 and unit_err <= 1e-4
    _report("dense-equivalence", ok,
            f"conv rel err {conv_err:.3e} <= 1e-5 over 200 configs, "
            f"unit rel err {unit_err:.3e} <= 1e-4 over 50 configs")


def test_a3_winograd_oracle():
    err = check_winograd(seed=2, rounds=100)
    _report("winograd-oracle", err <= 1e-4, f"rel err {err:.3e} <= 1e-4 over 100 configs")


def test_a4_tiling_coverage():
    violations = check_tiling_coverage(seed=3, rounds=500)
    _report("tiling-coverage", violations == 0,
            f"{violations} violations over 500 (mask, geometry) instances")


def test_a5_adjoint_and_gradients():
    adj = check_adjoint_identity(seed=4, rounds=100)
    grad = check_gradients(seed=5, rounds=10)
    ok = adj == 0.0 and grad <= 1e-5
    _report("adjoint-and-gradients", ok,
            f"adjoint residual {adj} (exact) over 100 geometries, "
            f"finite-difference rel err {grad:.3e} <= 1e-5 over 20 configs")


def test_a6_flop_model_autotuned():
    dims = (1, 400, 704, 32)
    conv = ConvParams((3, 3), (1, 1), Padding.SAME, 32)
    mask = synth_mask_topleft(dims[:3], 0.90)
    layer = LayerConfig(dims, conv, seed=0)
    chosen, _ = autotune_block_size(layer, mask, DEFAULT_CANDIDATES, warmup=15, iters=15)
    spec = compute_block_spec(dims, conv, chosen)
    idx = reduce_mask(mask, spec)
    ratio = flops_sparse(spec, idx, conv, (32, 32), 1, mask).speedup
    _report("flop-model", 7.0 <= ratio <= 10.0,
            f"autotuned block {chosen}, FLOP ratio {ratio:.3f} in [7, 10]")


def test_a7_wall_clock_trend():
    rng = np.random.default_rng(0)
    n, h, w, c = 1, 400, 704, 32
    x = Tensor4D(rng.standard_normal((n, h, w, c)).astype(np.float32))
    u = random_unit_params(rng, c, c // 2)
    dense = benchmark_layer(lambda: dense_residual_unit(x, u), warmup=15, iters=15)
    speedups = {}
    for s in (0.5, 0.7, 0.9):
        mask = synth_mask_topleft((n, h, w), s)
        sparse = benchmark_layer(lambda: sparse_residual_unit(x, mask, u, (32, 32)),
                                 warmup=15, iters=15)
        speedups[s] = dense.mean_ns / sparse.mean_ns
    ok = speedups[0.9] >= 2.0 and speedups[0.5] < speedups[0.7] < speedups[0.9]
    _report("wall-clock-trend", ok,
            "speedups " + ", ".join(f"{s}: {v:.2f}x" for s, v in speedups.items()) +
            "; >=2x at 0.9 and strictly increasing")


def test_a8_fused_transpose_equivalence():
    rng = np.random.default_rng(6)
    worst_case_ok = True
    for case in range(100):
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 7))
        h = int(rng.integers(6, 33))
        w = int(rng.integers(6, 33))
        k = int(rng.choice([1, 3]))
        b = k + int(rng.integers(1, 9))
        conv = ConvParams((k, k), (1, 1), Padding.SAME if case % 2 else Padding.VALID, c)
        spec = compute_block_spec((n, h, w, c), conv, (b, b))
        mask = BinaryMask((rng.random((n, h, w)) < 0.3).astype(np.uint8))
        idx = reduce_mask(mask, spec)
        x = Tensor4D(rng.standard_normal((n, h, w, c)).astype(np.float32))

        fused_g = gather_transpose(x, idx, spec)
        composed_g = transpose_layout(gather(x, idx, spec).tensor)
        if fused_g.tensor.layout is not Layout.CHANNELS_FIRST or \
                not np.array_equal(fused_g.tensor.data, composed_g.data):
            worst_case_ok = False
            break

        obh, obw = spec.out_block_size
        blocks_nhwc = gather(x, idx, spec).with_tensor(
            Tensor4D(rng.standard_normal((idx.count, obh, obw, c)).astype(np.float32)))
        blocks_nchw = blocks_nhwc.with_tensor(transpose_layout(blocks_nhwc.tensor))
        dst = Tensor4D(np.zeros((n, *spec.out_size, c), np.float32))
        fused_s = scatter_transpose(blocks_nchw, spec, dst)
        composed_s = scatter(blocks_nhwc, spec, dst)
        if not np.array_equal(fused_s.nhwc(), composed_s.nhwc()):
            worst_case_ok = False
            break
    _report("fused-transpose", worst_case_ok,
            "gather/scatter transpose bit-identical to two-step compositions over 100 cases")


def test_a9_demo_backbone(tmp_path, capsys):
    check_code = main(["demo", "--check", "--warmup", "0", "--iters", "1"])
    check_out = capsys.readouterr().out
    check_ok = check_code == 0 and check_out.count("PASS") == 4

    csv_path = tmp_path / "demo.csv"
    blob_code = main(["demo", "--sparsity", "0.9", "--warmup", "1", "--iters", "3",
                      "--out", str(csv_path)])
    capsys.readouterr()
    rows = read_csv(csv_path)
    speedups = [r.speedup for r in rows]
    blob_ok = (blob_code == 0 and len(speedups) == 4
               and all(np.isfinite(s) and s >= 1.0 for s in speedups)
               and all(a > b for a, b in zip(speedups, speedups[1:])))
    _report("demo-backbone", check_ok and blob_ok,
            f"check-mode stages all <=1e-4 (exit {check_code}); blob-mask FLOP speedups "
            + ", ".join(f"{s:.2f}x" for s in speedups) + " finite, >=1, decreasing with depth")
