"""Nearest-neighbour field matching with coarse-to-fine Embedded PatchMatch
and relevance-guided feature aggregation."""
from .accounting import CostLedger
from .aggregate import (DynamicAggregator, bilinear_sample, delta_kernel, dynamic_aggregate,
                        fuse_multiscale, predict_offsets, softmax_weights, standard_aggregate)
from .data import benchmark_paths
from .matcher import (NNF, EmbeddedPatchMatch, init_nnf, lr_propagate, ref_propagate, relevance,
                      run_embedded_patchmatch)
from .oracle import (BruteForceNNF, brute_force_nnf, convergence_trace, cost_model, enumerated_cost,
                     init_cost, nnf_mse)
from .pyramid import CoarseToFinePatchMatch, downscale_features, run_cfe, upscale_seed
from .tensor import PatchDescriptor, bicubic_resize, extract_descriptors, make_ref_pyramid

__version__ = "0.1.0"

__all__ = [
    "BruteForceNNF",
    "CoarseToFinePatchMatch",
    "CostLedger",
    "DynamicAggregator",
    "EmbeddedPatchMatch",
    "NNF",
    "PatchDescriptor",
    "benchmark_paths",
    "bicubic_resize",
    "bilinear_sample",
    "brute_force_nnf",
    "convergence_trace",
    "cost_model",
    "delta_kernel",
    "downscale_features",
    "dynamic_aggregate",
    "enumerated_cost",
    "extract_descriptors",
    "fuse_multiscale",
    "init_cost",
    "init_nnf",
    "lr_propagate",
    "make_ref_pyramid",
    "nnf_mse",
    "predict_offsets",
    "ref_propagate",
    "relevance",
    "run_cfe",
    "run_embedded_patchmatch",
    "softmax_weights",
    "standard_aggregate",
    "upscale_seed",
]
