"""Tiled block-sparse convolution on CPU.

Binary computation masks are reduced to lists of active block indices,
overlapping input blocks are gathered, run through dense kernels, and scattered
back into disjoint output regions, reproducing the dense result on active
regions at a fraction of the FLOPs.
"""

from .blocks import (GatheredBlocks, gather, gather_grad, gather_transpose, scatter,
                     scatter_add, scatter_grad, scatter_transpose)
from .errors import (BlockConvError, CoverageError, EmptyBlockListError, FormatError,
                     GeometryError, ShapeMismatchError, UnsupportedConfigError)
from .layers import (Backbone, ResidualUnitParams, Stage, StageConfig, StageResult,
                     build_backbone, build_stage, dense_residual_unit, load_backbone,
                     random_unit_params, run_backbone, run_stage, save_backbone,
                     sparse_batch_norm, sparse_conv2d, sparse_conv2d_grads,
                     sparse_residual_unit, sparse_residual_unit_grads)
from .ops import (BnMode, BnParams, ConvParams, FilterBank, Padding, PoolMode, batch_norm,
                  conv2d, conv2d_direct, conv2d_direct_grads, pool2d, relu)
from .perf import (BenchResult, BenchRow, FlopReport, LayerConfig, autotune_block_size,
                   benchmark_layer, flops_dense, flops_sparse, read_csv, synth_mask_blobs,
                   synth_mask_topleft, theoretical_speedup, write_csv)
from .tensor import Layout, Tensor4D, load_sbt4, save_sbt4, transpose_layout
from .tiling import (BinaryMask, BlockIndexList, BlockSpec, compute_block_spec,
                     coverage_check, downsample_mask, load_sbmk, reduce_mask, save_sbmk)
from .winograd import conv2d_winograd

__version__ = "0.1.0"
