from .tensor import Tensor, as_tensor, set_debug, debug_enabled
from .ops import (
    add,
    scale,
    crop2d,
    mean_over,
    clip_st,
    conv2d,
    deconv2d,
    prelu,
    grouped_softmax,
    binarize_st,
    softmax_flat,
    softmax_batched,
    cross_entropy,
    score_nll,
    entropy_sum,
    mse,
    power_normalized_mse,
    rotate_bilinear,
    correlate_valid,
)
from .optim import AdamState, adam_step
from .checkpoint import CheckpointError, save_checkpoint, load_checkpoint

__all__ = [
    "Tensor", "as_tensor", "set_debug", "debug_enabled",
    "add", "scale", "crop2d", "mean_over", "clip_st",
    "conv2d", "deconv2d", "prelu", "grouped_softmax", "binarize_st",
    "softmax_flat", "softmax_batched", "cross_entropy", "score_nll", "entropy_sum",
    "mse", "power_normalized_mse", "rotate_bilinear", "correlate_valid",
    "AdamState", "adam_step",
    "CheckpointError", "save_checkpoint", "load_checkpoint",
]
