"""N:M structured sparsity: learned masks, magnitude baselines, 2:4 kernels
and prediction-stability certificates."""

from ._core import (
    Accuracy,
    Classifier,
    FormatError,
    NmConfig,
    conv2d,
    efficacy_score,
    flop_count,
    gumbel_sample,
    load_idx,
    load_masks,
    magnitude_mask,
    make_digits,
    pattern_count,
    patterns,
    permutation_search,
    random_mask,
    spmm,
    validate_mask,
)

__all__ = [
    "Accuracy",
    "Classifier",
    "FormatError",
    "NmConfig",
    "conv2d",
    "efficacy_score",
    "flop_count",
    "gumbel_sample",
    "load_idx",
    "load_masks",
    "magnitude_mask",
    "make_digits",
    "pattern_count",
    "patterns",
    "permutation_search",
    "random_mask",
    "spmm",
    "validate_mask",
]
