"""Command-line entry point: verify, bench, sweep, maskgen, demo.

Heavy imports happen inside the command handlers so that --threads can pin the
BLAS thread pool before numpy is loaded.
"""
from __future__ import annotations

import argparse
import os
import sys


def _dims(text: str, count: int, name: str):
    parts = text.split(",")
    if len(parts) != count or not all(p.strip().lstrip("-").isdigit() for p in parts):
        raise argparse.ArgumentTypeError(f"{name} must be {count} comma-separated integers, got {text!r}")
    vals = tuple(int(p) for p in parts)
    if any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError(f"{name} entries must be positive, got {text!r}")
    return vals


def _parse_block(text: str):
    return _dims(text, 2, "--block")


def _parse_candidates(text: str):
    out = []
    for part in text.split(";" if ";" in text else ","):
        part = part.strip()
        if "x" in part:
            a, b = part.split("x")
            out.append((int(a), int(b)))
        else:
            out.append((int(part), int(part)))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockconv",
                                     description="Tiled block-sparse convolution toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None,
                       help="intra-op parallelism degree passed to the BLAS pool")

    pv = sub.add_parser("verify", help="run the full invariant suite")
    common(pv)
    pv.add_argument("--rounds", type=int, default=15)
    pv.add_argument("--halo", type=int, default=1,
                    help="residual-unit gather halo (1 is correct; 0 demonstrates failure)")
    pv.set_defaults(func=cmd_verify)

    pb = sub.add_parser("bench", help="time one layer dense vs sparse and write CSV")
    common(pb)
    pb.add_argument("--dims", type=lambda s: _dims(s, 4, "--dims"), default=(1, 400, 704, 32),
                    help="input tensor dims n,h,w,c")
    pb.add_argument("--block", type=_parse_block, default=(32, 32))
    pb.add_argument("--sparsity", type=float, default=0.9)
    pb.add_argument("--mask", help="SBMK mask file (overrides --sparsity)")
    pb.add_argument("--iters", type=int, default=15)
    pb.add_argument("--warmup", type=int, default=15)
    pb.add_argument("--op", choices=["conv", "unit"], default="conv")
    pb.add_argument("--out", help="CSV output path")
    pb.set_defaults(func=cmd_bench)

    ps = sub.add_parser("sweep", help="autotune the block size for one layer")
    common(ps)
    ps.add_argument("--dims", type=lambda s: _dims(s, 4, "--dims"), default=(1, 400, 704, 32))
    ps.add_argument("--candidates", type=_parse_candidates, default=None,
                    help="e.g. 8,16,24,32 (square) or 8x8;16x32")
    ps.add_argument("--sparsity", type=float, default=0.9)
    ps.add_argument("--mask", help="SBMK mask file (overrides --sparsity)")
    ps.add_argument("--iters", type=int, default=15)
    ps.add_argument("--warmup", type=int, default=15)
    ps.add_argument("--out", help="CSV output path")
    ps.set_defaults(func=cmd_sweep)

    pm = sub.add_parser("maskgen", help="write a synthetic SBMK mask file")
    common(pm)
    pm.add_argument("--dims", type=lambda s: _dims(s, 3, "--dims"), required=True,
                    help="mask dims n,h,w")
    pm.add_argument("--kind", choices=["topleft", "blob"], default="topleft")
    pm.add_argument("--sparsity", type=float, default=0.9)
    pm.add_argument("--out", required=True)
    pm.set_defaults(func=cmd_maskgen)

    pd = sub.add_parser("demo", help="run the scaled-down 4-stage sparse backbone")
    common(pd)
    pd.add_argument("--sparsity", type=float, default=0.9)
    pd.add_argument("--check", action="store_true",
                    help="use a full mask and compare every stage against the dense backbone")
    pd.add_argument("--iters", type=int, default=5)
    pd.add_argument("--warmup", type=int, default=2)
    pd.add_argument("--out", help="CSV output path for the per-stage report")
    pd.set_defaults(func=cmd_demo)

    return parser


def _pin_threads(threads: int | None) -> None:
    if threads is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def _load_or_synth_mask(args, dims3):
    from .perf import synth_mask_topleft
    from .tiling import load_sbmk

    if getattr(args, "mask", None):
        return load_sbmk(args.mask)
    return synth_mask_topleft(dims3, args.sparsity)


def cmd_verify(args) -> int:
    from .verify import run_verification

    results = run_verification(seed=args.seed, rounds=args.rounds, halo=args.halo)
    width = max(len(r.name) for r in results)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max_error={r.max_error:.3e}  tolerance={r.tolerance:.1e}  {status}")
        ok &= r.passed
    if not ok:
        first = next(r for r in results if not r.passed)
        print(f"FAILED: {first.name} (max_error {first.max_error:.3e} > {first.tolerance:.1e})",
              file=sys.stderr)
    return 0 if ok else 1


def cmd_bench(args) -> int:
    import numpy as np

    from .layers import (dense_residual_unit, random_unit_params, sparse_conv2d,
                         sparse_residual_unit)
    from .ops import ConvParams, FilterBank, Padding, conv2d_direct
    from .perf import (BenchRow, benchmark_layer, flops_dense, flops_sparse,
                       flops_unit_dense, flops_unit_sparse, format_table, write_csv)
    from .tensor import Tensor4D
    from .tiling import compute_block_spec, reduce_mask

    n, h, w, c = args.dims
    rng = np.random.default_rng(args.seed)
    mask = _load_or_synth_mask(args, (n, h, w))
    sparsity = 1.0 - mask.active_fraction
    x = Tensor4D(rng.standard_normal((n, h, w, c)).astype(np.float32))

    if args.op == "conv":
        conv = ConvParams((3, 3), (1, 1), Padding.SAME, c)
        f = FilterBank(rng.standard_normal((3, 3, c, c)).astype(np.float32))
        spec = compute_block_spec(x.dims, conv, args.block)
        idx = reduce_mask(mask, spec)
        fd = flops_dense(x.dims, conv)
        fs = flops_sparse(spec, idx, conv, (c, c), n, mask).sparse_flops
        dense_res = benchmark_layer(lambda: conv2d_direct(x, f, conv), args.warmup, args.iters)
        sparse_res = benchmark_layer(lambda: sparse_conv2d(x, mask, f, conv, args.block),
                                     args.warmup, args.iters)
    else:
        m = max(1, c // 2)
        u = random_unit_params(rng, c, m)
        spec = compute_block_spec(x.dims, ConvParams((3, 3), (1, 1), Padding.SAME, c), args.block)
        idx = reduce_mask(mask, spec)
        fd = flops_unit_dense(x.dims, (c, m))
        fs = flops_unit_sparse(spec, idx, (c, m))
        dense_res = benchmark_layer(lambda: dense_residual_unit(x, u), args.warmup, args.iters)
        sparse_res = benchmark_layer(lambda: sparse_residual_unit(x, mask, u, args.block),
                                     args.warmup, args.iters)

    rows = [
        BenchRow(f"{args.op}-dense", sparsity, args.block[0], args.block[1],
                 dense_res.mean_ns, dense_res.std_ns, dense_res.min_ns, fd, fd, 1.0),
        BenchRow(f"{args.op}-sparse", sparsity, args.block[0], args.block[1],
                 sparse_res.mean_ns, sparse_res.std_ns, sparse_res.min_ns, fd, fs,
                 dense_res.mean_ns / sparse_res.mean_ns),
    ]
    print(format_table(rows))
    if args.out:
        write_csv(args.out, rows)
    return 0


def cmd_sweep(args) -> int:
    from .ops import ConvParams, Padding
    from .perf import (DEFAULT_CANDIDATES, BenchRow, LayerConfig, autotune_block_size,
                       flops_dense, flops_sparse, format_table, write_csv)
    from .tiling import compute_block_spec, reduce_mask

    n, h, w, c = args.dims
    mask = _load_or_synth_mask(args, (n, h, w))
    sparsity = 1.0 - mask.active_fraction
    conv = ConvParams((3, 3), (1, 1), Padding.SAME, c)
    layer = LayerConfig(args.dims, conv, seed=args.seed)
    chosen, table = autotune_block_size(layer, mask, args.candidates or DEFAULT_CANDIDATES,
                                        warmup=args.warmup, iters=args.iters)
    rows = []
    for cand, res in table:
        spec = compute_block_spec(args.dims, conv, cand)
        idx = reduce_mask(mask, spec)
        report = flops_sparse(spec, idx, conv, (c, c), n, mask)
        rows.append(BenchRow("sweep", sparsity, cand[0], cand[1], res.mean_ns, res.std_ns,
                             res.min_ns, report.dense_flops, report.sparse_flops, report.speedup))
    print(format_table(rows))
    print(f"chosen block size: {chosen[0]}x{chosen[1]}")
    if args.out:
        write_csv(args.out, rows)
    return 0


def cmd_maskgen(args) -> int:
    from .perf import synth_mask_blobs, synth_mask_topleft
    from .tiling import save_sbmk

    if args.kind == "topleft":
        mask = synth_mask_topleft(args.dims, args.sparsity)
    else:
        mask = synth_mask_blobs(args.dims, args.sparsity, args.seed)
    save_sbmk(args.out, mask)
    print(f"wrote {args.out}: dims {mask.dims}, achieved sparsity {1.0 - mask.active_fraction:.4f}")
    return 0


DEMO_STAGES = [
    # (units, (c_in, c_mid, c_out), block, mask_scale, stride)
    (1, (8, 12, 24), (16, 16), 1, 1),
    (2, (24, 24, 48), (12, 12), 2, 2),
    (2, (48, 32, 64), (8, 8), 4, 2),
    (1, (64, 48, 96), (5, 5), 8, 2),
]
DEMO_INPUT = (1, 100, 176, 8)


def demo_stage_configs():
    from .layers import StageConfig

    return [StageConfig(u, ch, bs, scale, stride) for u, ch, bs, scale, stride in DEMO_STAGES]


def cmd_demo(args) -> int:
    import numpy as np

    from .layers import build_backbone, run_backbone
    from .perf import (BenchRow, benchmark_layer, flops_unit_dense, flops_unit_sparse,
                       format_table, synth_mask_blobs, write_csv)
    from .tensor import Tensor4D
    from .tiling import BinaryMask
    from .verify import rel_err

    rng = np.random.default_rng(args.seed)
    cfgs = demo_stage_configs()
    bb = build_backbone(cfgs, rng)
    n, h, w, c = DEMO_INPUT
    x = Tensor4D(rng.standard_normal((n, h, w, c)).astype(np.float32))
    if args.check:
        mask = BinaryMask.full(n, h, w)
    else:
        mask = synth_mask_blobs((n, h, w), args.sparsity, args.seed)

    sparse_results = run_backbone(bb, x, mask, sparse=True)
    dense_results = run_backbone(bb, x, mask, sparse=False)

    status = 0
    if args.check:
        for i, (s, d) in enumerate(zip(sparse_results, dense_results)):
            err = rel_err(s.output.nhwc(), d.output.nhwc())
            ok = err <= 1e-4
            print(f"stage {i + 1}: max relative error vs dense = {err:.3e}  "
                  f"{'PASS' if ok else 'FAIL'}")
            if not ok:
                status = 1

    rows = []
    cur = x
    for i, (stage, sres) in enumerate(zip(bb.stages, sparse_results)):
        cfg = stage.config
        dims = sres.output.dims
        c_out, c_mid = cfg.channels[2], cfg.channels[1]
        fd = flops_unit_dense(dims, (c_out, c_mid)) * cfg.unit_count
        fs = flops_unit_sparse(sres.spec, sres.indices, (c_out, c_mid)) * cfg.unit_count
        inp = cur

        def run(sparse):
            from .layers import run_stage
            return lambda: run_stage(stage, inp, mask, sparse=sparse)

        dt = benchmark_layer(run(False), args.warmup, args.iters)
        st = benchmark_layer(run(True), args.warmup, args.iters)
        rows.append(BenchRow(f"stage-{i + 1}", 1.0 - sres.mask.active_fraction,
                             cfg.block_size[0], cfg.block_size[1], st.mean_ns, st.std_ns,
                             st.min_ns, fd, fs, fd / fs if fs else float("inf")))
        print(f"stage {i + 1}: dims {dims}, active blocks {sres.indices.count}, "
              f"FLOP speedup {rows[-1].speedup:.2f}x, "
              f"wall-clock speedup {dt.mean_ns / st.mean_ns:.2f}x")
        cur = sres.output
    print(format_table(rows))
    if args.out:
        write_csv(args.out, rows)
    return status


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _pin_threads(args.threads)
    from .errors import BlockConvError

    try:
        return args.func(args)
    except (BlockConvError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
