"""Composite sparse layers: masked convolution, blockwise batch norm, residual units,
multi-stage backbone, and the weights manifest format."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .blocks import (GatheredBlocks, gather, gather_grad, in_bounds_map, scatter,
                     scatter_add, scatter_grad)
from .errors import EmptyBlockListError, GeometryError, ShapeMismatchError, UnsupportedConfigError
from .ops import (BnMode, BnParams, ConvParams, FilterBank, Padding, PoolMode,
                  bn_inference_nhwc, conv2d_direct, conv2d_grads_nhwc, conv2d_nhwc)
from .tensor import Tensor4D
from .tiling import (BinaryMask, BlockIndexList, BlockSpec, compute_block_spec,
                     downsample_mask, reduce_mask)


def _check_mask(x: Tensor4D, mask: BinaryMask) -> None:
    n, h, w, _ = x.dims
    if mask.dims != (n, h, w):
        raise ShapeMismatchError(f"mask dims {mask.dims} != tensor (n, h, w) {(n, h, w)}")


def sparse_conv2d(x: Tensor4D, mask: BinaryMask, f: FilterBank, p: ConvParams,
                  block_size: tuple[int, int], pool: PoolMode = PoolMode.MAX,
                  threshold: float | None = None, dst: Tensor4D | None = None) -> Tensor4D:
    """Mask-guided convolution: gather active blocks, dense valid conv per block, scatter.

    On every output pixel belonging to an active block's write region the result
    equals the dense convolution of x; elsewhere the destination (zeros by
    default) is left untouched.
    """
    _check_mask(x, mask)
    spec = compute_block_spec(x.dims, p, block_size)
    idx = reduce_mask(mask, spec, pool, threshold)
    n = x.dims[0]
    if dst is None:
        dst = Tensor4D.from_nhwc(
            np.zeros((n, spec.out_size[0], spec.out_size[1], f.c_out), x.dtype), x.layout)
    if idx.count == 0:
        return dst
    g = gather(x, idx, spec)
    blk = conv2d_nhwc(g.tensor.nhwc(), f.weights, f.bias, p.stride, (0, 0))
    return scatter(g.with_tensor(Tensor4D(blk)), spec, dst)


def sparse_conv2d_grads(x: Tensor4D, mask: BinaryMask, f: FilterBank, p: ConvParams,
                        block_size: tuple[int, int], g_out: Tensor4D,
                        pool: PoolMode = PoolMode.MAX, threshold: float | None = None):
    """Input/weight/bias gradients of sparse_conv2d for upstream gradient g_out."""
    _check_mask(x, mask)
    spec = compute_block_spec(x.dims, p, block_size)
    idx = reduce_mask(mask, spec, pool, threshold)
    if idx.count == 0:
        dx = Tensor4D.from_nhwc(np.zeros(x.nhwc().shape, x.dtype), x.layout)
        return dx, np.zeros_like(f.weights), np.zeros(f.c_out, x.dtype)
    g = gather(x, idx, spec)
    g_blk = scatter_grad(g_out, idx, spec)
    dx_blk, dw, db = conv2d_grads_nhwc(g.tensor.nhwc(), f.weights, p.stride, (0, 0),
                                       g_blk.tensor.nhwc())
    dx = gather_grad(g.with_tensor(Tensor4D(dx_blk)), spec, x.dims)
    return Tensor4D.from_nhwc(dx.nhwc(), x.layout), dw, db


def sparse_batch_norm(blocks: GatheredBlocks, bn: BnParams, mode: BnMode = BnMode.INFERENCE):
    """Batch norm over gathered blocks only; TRAIN_STATS statistics span the
    B*bh*bw gathered positions and exclude inactive regions."""
    arr = blocks.tensor.nhwc()
    if bn.gamma.shape[0] != arr.shape[3]:
        raise ShapeMismatchError(f"bn channels {bn.gamma.shape[0]} != block channels {arr.shape[3]}")
    if mode is BnMode.INFERENCE:
        return blocks.with_tensor(Tensor4D(bn_inference_nhwc(arr, bn), blocks.tensor.layout))
    if blocks.count == 0:
        raise EmptyBlockListError("train-mode statistics are undefined for an empty block list")
    mean = arr.mean(axis=(0, 1, 2))
    var = arr.var(axis=(0, 1, 2))
    scale = (bn.gamma / np.sqrt(var + bn.epsilon)).astype(arr.dtype)
    out = (arr - mean.astype(arr.dtype)) * scale + bn.beta.astype(arr.dtype)
    return blocks.with_tensor(Tensor4D(out, blocks.tensor.layout)), (mean, var)


@dataclass(frozen=True)
class ResidualUnitParams:
    """Bottleneck unit 1x1 (c->m), 3x3 (m->m), 1x1 (m->c) with per-conv batch norm."""

    conv1: FilterBank
    conv2: FilterBank
    conv3: FilterBank
    bn1: BnParams
    bn2: BnParams
    bn3: BnParams
    pre_activation: bool = True

    def __post_init__(self):
        if self.conv1.weights.shape[:2] != (1, 1) or self.conv3.weights.shape[:2] != (1, 1):
            raise ShapeMismatchError("conv1/conv3 must be 1x1")
        if self.conv2.weights.shape[:2] != (3, 3):
            raise ShapeMismatchError("conv2 must be 3x3")
        if self.conv1.c_out != self.conv2.c_in or self.conv2.c_out != self.conv3.c_in:
            raise ShapeMismatchError("unit channel chain is inconsistent")
        if self.conv3.c_out != self.conv1.c_in:
            raise ShapeMismatchError(
                f"identity shortcut needs c_out {self.conv3.c_out} == c_in {self.conv1.c_in}")

    @property
    def channels(self) -> int:
        return self.conv1.c_in

    @property
    def mid_channels(self) -> int:
        return self.conv1.c_out


def random_unit_params(rng: np.random.Generator, c: int, m: int, dtype=np.float32,
                       scale: float = 0.2, pre_activation: bool = True) -> ResidualUnitParams:
    def fb(kh, kw, ci, co):
        return FilterBank(rng.standard_normal((kh, kw, ci, co)).astype(dtype) * scale,
                          rng.standard_normal(co).astype(dtype) * scale)

    def bn(ch):
        return BnParams(
            gamma=(0.5 + rng.random(ch)).astype(dtype),
            beta=(rng.standard_normal(ch) * scale).astype(dtype),
            running_mean=(rng.standard_normal(ch) * scale).astype(dtype),
            running_var=(0.5 + rng.random(ch)).astype(dtype),
        )

    b1 = bn(c) if pre_activation else bn(m)
    b3 = bn(m) if pre_activation else bn(c)
    return ResidualUnitParams(fb(1, 1, c, m), fb(3, 3, m, m), fb(1, 1, m, c),
                              b1, bn(m), b3, pre_activation)


def _unit_branch(arr: np.ndarray, u: ResidualUnitParams, bn_mode: BnMode,
                 conv2_pad: tuple[int, int], crop: int, with_cache: bool = False,
                 valid_map: np.ndarray | None = None):
    """In-block bottleneck chain on a plain (B|n, h, w, c) array.

    valid_map (B, h, w) zeroes the 3x3 conv input at positions the gather
    zero-filled, matching the dense unit's same-padding at image borders
    (the pointwise prelude maps gathered zeros to nonzero values otherwise).
    """
    def bn_apply(t, params):
        if bn_mode is BnMode.INFERENCE:
            return bn_inference_nhwc(t, params)
        mean = t.mean(axis=(0, 1, 2))
        var = t.var(axis=(0, 1, 2))
        scale = (params.gamma / np.sqrt(var + params.epsilon)).astype(t.dtype)
        return (t - mean.astype(t.dtype)) * scale + params.beta.astype(t.dtype)

    cache = {}
    if u.pre_activation:
        b1 = bn_apply(arr, u.bn1)
        r1 = np.maximum(b1, 0)
        c1 = conv2d_nhwc(r1, u.conv1.weights, u.conv1.bias, (1, 1), (0, 0))
        b2 = bn_apply(c1, u.bn2)
        r2 = np.maximum(b2, 0)
        if valid_map is not None:
            r2 = r2 * valid_map[..., None]
        c2 = conv2d_nhwc(r2, u.conv2.weights, u.conv2.bias, (1, 1), conv2_pad)
        c2c = c2[:, crop:c2.shape[1] - crop, crop:c2.shape[2] - crop, :] if crop else c2
        b3 = bn_apply(c2c, u.bn3)
        r3 = np.maximum(b3, 0)
        out = conv2d_nhwc(r3, u.conv3.weights, u.conv3.bias, (1, 1), (0, 0))
        if with_cache:
            cache = dict(b1=b1, r1=r1, b2=b2, r2=r2, c2_shape=c2.shape, b3=b3, r3=r3)
    else:
        c1 = conv2d_nhwc(arr, u.conv1.weights, u.conv1.bias, (1, 1), (0, 0))
        r1 = np.maximum(bn_apply(c1, u.bn1), 0)
        if valid_map is not None:
            r1 = r1 * valid_map[..., None]
        c2 = conv2d_nhwc(r1, u.conv2.weights, u.conv2.bias, (1, 1), conv2_pad)
        c2c = c2[:, crop:c2.shape[1] - crop, crop:c2.shape[2] - crop, :] if crop else c2
        r2 = np.maximum(bn_apply(c2c, u.bn2), 0)
        out = bn_apply(conv2d_nhwc(r2, u.conv3.weights, u.conv3.bias, (1, 1), (0, 0)), u.bn3)
    return (out, cache) if with_cache else out


def _unit_spec(x_dims, mask: BinaryMask, block_size: tuple[int, int], halo: int):
    """Block geometry for a shared gather/scatter pair around the unit's 3x3 receptive growth."""
    if halo < 0:
        raise GeometryError(f"halo must be >= 0, got {halo}")
    k = 2 * halo + 1
    c = x_dims[3]
    eff = ConvParams(kernel=(k, k), stride=(1, 1), padding=Padding.SAME, filter_count=c)
    if block_size[0] < k or block_size[1] < k:
        raise GeometryError(f"block size {block_size} too small for halo {halo}")
    return compute_block_spec(x_dims, eff, block_size)


def dense_residual_unit(x: Tensor4D, u: ResidualUnitParams,
                        bn_mode: BnMode = BnMode.INFERENCE) -> Tensor4D:
    """Dense oracle for the sparse residual unit (3x3 conv under same padding)."""
    if u.channels != x.dims[3]:
        raise ShapeMismatchError(f"unit channels {u.channels} != input channels {x.dims[3]}")
    branch = _unit_branch(x.nhwc(), u, bn_mode, conv2_pad=(1, 1), crop=0)
    return Tensor4D.from_nhwc(x.nhwc() + branch, x.layout)


def sparse_residual_unit(x: Tensor4D, mask: BinaryMask, u: ResidualUnitParams,
                         block_size: tuple[int, int], halo: int = 1,
                         bn_mode: BnMode = BnMode.INFERENCE,
                         _shared: tuple[BlockSpec, BlockIndexList] | None = None) -> Tensor4D:
    """Residual unit run inside one gather/scatter pair; identity shortcut keeps
    inactive pixels bit-identical to the input.

    halo=1 matches the unit's receptive growth; halo>1 over-gathers harmlessly;
    halo=0 degrades to block-local same padding and is provided for geometry checks.
    """
    if u.channels != x.dims[3]:
        raise ShapeMismatchError(f"unit channels {u.channels} != input channels {x.dims[3]}")
    if _shared is None:
        _check_mask(x, mask)
        spec = _unit_spec(x.dims, mask, block_size, halo)
        idx = reduce_mask(mask, spec, PoolMode.MAX)
    else:
        spec, idx = _shared
    if idx.count == 0:
        return x
    g = gather(x, idx, spec)
    conv2_pad = (0, 0) if halo >= 1 else (1, 1)
    crop = halo - 1 if halo >= 1 else 0
    valid = in_bounds_map(idx, spec)
    branch = _unit_branch(g.tensor.nhwc(), u, bn_mode, conv2_pad, crop,
                          valid_map=valid.astype(x.dtype))
    return scatter_add(g.with_tensor(Tensor4D(branch)), spec, x)


def sparse_residual_unit_grads(x: Tensor4D, mask: BinaryMask, u: ResidualUnitParams,
                               block_size: tuple[int, int], g_out: Tensor4D, halo: int = 1):
    """Input and weight gradients of the (pre-activation, inference-BN) sparse unit.

    Returns (dx, {"conv1": (dw, db), "conv2": ..., "conv3": ...}).
    """
    if not u.pre_activation:
        raise UnsupportedConfigError("gradients implemented for the pre-activation chain only")
    _check_mask(x, mask)
    spec = _unit_spec(x.dims, mask, block_size, halo)
    idx = reduce_mask(mask, spec, PoolMode.MAX)
    zero_w = {name: (np.zeros_like(getattr(u, name).weights), np.zeros(getattr(u, name).c_out))
              for name in ("conv1", "conv2", "conv3")}
    if idx.count == 0:
        return g_out, zero_w
    g = gather(x, idx, spec)
    conv2_pad = (0, 0) if halo >= 1 else (1, 1)
    crop = halo - 1 if halo >= 1 else 0
    valid = in_bounds_map(idx, spec).astype(x.dtype)
    _, cache = _unit_branch(g.tensor.nhwc(), u, BnMode.INFERENCE, conv2_pad, crop,
                            with_cache=True, valid_map=valid)

    def bn_scale(params, dtype):
        return (params.gamma / np.sqrt(params.running_var + params.epsilon)).astype(dtype)

    g_blk = scatter_grad(g_out, idx, spec).tensor.nhwc()
    d_r3, dw3, db3 = conv2d_grads_nhwc(cache["r3"], u.conv3.weights, (1, 1), (0, 0), g_blk)
    d_c2c = d_r3 * (cache["b3"] > 0) * bn_scale(u.bn3, d_r3.dtype)
    if crop:
        padded = np.zeros(cache["c2_shape"], d_c2c.dtype)
        padded[:, crop:-crop, crop:-crop, :] = d_c2c
        d_c2c = padded
    d_r2, dw2, db2 = conv2d_grads_nhwc(cache["r2"], u.conv2.weights, (1, 1), conv2_pad, d_c2c)
    d_c1 = d_r2 * valid[..., None] * (cache["b2"] > 0) * bn_scale(u.bn2, d_r2.dtype)
    d_r1, dw1, db1 = conv2d_grads_nhwc(cache["r1"], u.conv1.weights, (1, 1), (0, 0), d_c1)
    d_a0 = d_r1 * (cache["b1"] > 0) * bn_scale(u.bn1, d_r1.dtype)
    d_branch = gather_grad(g.with_tensor(Tensor4D(d_a0)), spec, x.dims)
    dx = Tensor4D.from_nhwc(g_out.nhwc() + d_branch.nhwc(), x.layout)
    return dx, {"conv1": (dw1, db1), "conv2": (dw2, db2), "conv3": (dw3, db3)}


@dataclass(frozen=True)
class StageConfig:
    unit_count: int
    channels: tuple[int, int, int]   # (c_in, c_mid, c_out)
    block_size: tuple[int, int]
    mask_scale: int = 1              # downsample factor from the base mask to this stage
    stride: int = 1                  # dense projection conv stride (stage transition)


@dataclass(frozen=True)
class Stage:
    config: StageConfig
    projection: FilterBank | None    # dense 3x3 stride-s conv c_in -> c_out
    units: tuple[ResidualUnitParams, ...]


@dataclass(frozen=True)
class StageResult:
    output: Tensor4D
    mask: BinaryMask | None
    spec: BlockSpec | None
    indices: BlockIndexList | None


def build_stage(cfg: StageConfig, rng: np.random.Generator, dtype=np.float32,
                scale: float = 0.2) -> Stage:
    c_in, c_mid, c_out = cfg.channels
    projection = None
    if cfg.stride != 1 or c_in != c_out:
        projection = FilterBank(
            rng.standard_normal((3, 3, c_in, c_out)).astype(dtype) * scale,
            rng.standard_normal(c_out).astype(dtype) * scale,
        )
    units = tuple(random_unit_params(rng, c_out, c_mid, dtype, scale)
                  for _ in range(cfg.unit_count))
    return Stage(cfg, projection, units)


def run_stage(stage: Stage, x: Tensor4D, base_mask: BinaryMask | None, sparse: bool = True,
              bn_mode: BnMode = BnMode.INFERENCE) -> StageResult:
    """One backbone stage: optional dense stride-s projection, then residual units
    that all reuse a single block index list derived from the downsampled mask."""
    cfg = stage.config
    if stage.projection is not None:
        p = ConvParams((3, 3), (cfg.stride, cfg.stride), Padding.SAME, cfg.channels[2])
        x = conv2d_direct(x, stage.projection, p)
    if not sparse:
        for u in stage.units:
            x = dense_residual_unit(x, u, bn_mode)
        return StageResult(x, None, None, None)
    mask = downsample_mask(base_mask, cfg.mask_scale)
    _check_mask(x, mask)
    spec = _unit_spec(x.dims, mask, cfg.block_size, halo=1)
    idx = reduce_mask(mask, spec, PoolMode.MAX)
    for u in stage.units:
        x = sparse_residual_unit(x, mask, u, cfg.block_size, bn_mode=bn_mode, _shared=(spec, idx))
    return StageResult(x, mask, spec, idx)


@dataclass(frozen=True)
class Backbone:
    stages: tuple[Stage, ...]


def build_backbone(stage_cfgs, rng: np.random.Generator, dtype=np.float32,
                   scale: float = 0.2) -> Backbone:
    for prev, nxt in zip(stage_cfgs, stage_cfgs[1:]):
        if prev.channels[2] != nxt.channels[0]:
            raise ShapeMismatchError(
                f"stage channel chain broken: {prev.channels[2]} -> {nxt.channels[0]}")
    return Backbone(tuple(build_stage(cfg, rng, dtype, scale) for cfg in stage_cfgs))


def run_backbone(bb: Backbone, x: Tensor4D, base_mask: BinaryMask | None, sparse: bool = True,
                 bn_mode: BnMode = BnMode.INFERENCE) -> list[StageResult]:
    results = []
    for stage in bb.stages:
        res = run_stage(stage, x, base_mask, sparse, bn_mode)
        results.append(res)
        x = res.output
    return results


# --- weights manifest -------------------------------------------------------

def _save_array(dirpath, name, arr) -> str:
    from .tensor import Tensor4D as T4, save_sbt4
    arr = np.asarray(arr)
    if arr.ndim == 1:
        arr = arr.reshape(1, 1, 1, -1)
    fname = f"{name}.sbt4"
    save_sbt4(os.path.join(dirpath, fname), T4(arr))
    return fname


def _load_array(dirpath, fname, vector=False):
    from .tensor import load_sbt4
    arr = load_sbt4(os.path.join(dirpath, fname)).data
    return arr.reshape(-1) if vector else arr


def _filter_entry(dirpath, name, fb: FilterBank):
    entry = {"weights": _save_array(dirpath, f"{name}_w", fb.weights), "bias": None}
    if fb.bias is not None:
        entry["bias"] = _save_array(dirpath, f"{name}_b", fb.bias)
    return entry


def _load_filter(dirpath, entry) -> FilterBank:
    bias = _load_array(dirpath, entry["bias"], vector=True) if entry["bias"] else None
    return FilterBank(_load_array(dirpath, entry["weights"]), bias)


def _bn_entry(dirpath, name, bn: BnParams):
    return {
        "gamma": _save_array(dirpath, f"{name}_gamma", bn.gamma),
        "beta": _save_array(dirpath, f"{name}_beta", bn.beta),
        "mean": _save_array(dirpath, f"{name}_mean", bn.running_mean),
        "var": _save_array(dirpath, f"{name}_var", bn.running_var),
        "epsilon": bn.epsilon,
    }


def _load_bn(dirpath, entry) -> BnParams:
    return BnParams(
        gamma=_load_array(dirpath, entry["gamma"], vector=True),
        beta=_load_array(dirpath, entry["beta"], vector=True),
        running_mean=_load_array(dirpath, entry["mean"], vector=True),
        running_var=_load_array(dirpath, entry["var"], vector=True),
        epsilon=entry["epsilon"],
    )


def save_backbone(dirpath, bb: Backbone) -> None:
    """Write all weights as SBT4 tensors plus a JSON manifest into a directory."""
    os.makedirs(dirpath, exist_ok=True)
    stages = []
    for si, stage in enumerate(bb.stages):
        cfg = stage.config
        entry = {
            "unit_count": cfg.unit_count,
            "channels": list(cfg.channels),
            "block_size": list(cfg.block_size),
            "mask_scale": cfg.mask_scale,
            "stride": cfg.stride,
            "projection": None,
            "units": [],
        }
        if stage.projection is not None:
            entry["projection"] = _filter_entry(dirpath, f"s{si}_proj", stage.projection)
        for ui, u in enumerate(stage.units):
            tag = f"s{si}_u{ui}"
            entry["units"].append({
                "pre_activation": u.pre_activation,
                "conv1": _filter_entry(dirpath, f"{tag}_conv1", u.conv1),
                "conv2": _filter_entry(dirpath, f"{tag}_conv2", u.conv2),
                "conv3": _filter_entry(dirpath, f"{tag}_conv3", u.conv3),
                "bn1": _bn_entry(dirpath, f"{tag}_bn1", u.bn1),
                "bn2": _bn_entry(dirpath, f"{tag}_bn2", u.bn2),
                "bn3": _bn_entry(dirpath, f"{tag}_bn3", u.bn3),
            })
        stages.append(entry)
    manifest = {"format": "blockconv-weights", "version": 1, "stages": stages}
    with open(os.path.join(dirpath, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)


def load_backbone(dirpath) -> Backbone:
    with open(os.path.join(dirpath, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest.get("format") != "blockconv-weights":
        raise ShapeMismatchError("not a blockconv weights manifest")
    stages = []
    for entry in manifest["stages"]:
        cfg = StageConfig(
            unit_count=entry["unit_count"],
            channels=tuple(entry["channels"]),
            block_size=tuple(entry["block_size"]),
            mask_scale=entry["mask_scale"],
            stride=entry["stride"],
        )
        projection = _load_filter(dirpath, entry["projection"]) if entry["projection"] else None
        units = tuple(
            ResidualUnitParams(
                conv1=_load_filter(dirpath, ue["conv1"]),
                conv2=_load_filter(dirpath, ue["conv2"]),
                conv3=_load_filter(dirpath, ue["conv3"]),
                bn1=_load_bn(dirpath, ue["bn1"]),
                bn2=_load_bn(dirpath, ue["bn2"]),
                bn3=_load_bn(dirpath, ue["bn3"]),
                pre_activation=ue["pre_activation"],
            )
            for ue in entry["units"]
        )
        stages.append(Stage(cfg, projection, units))
    return Backbone(tuple(stages))
