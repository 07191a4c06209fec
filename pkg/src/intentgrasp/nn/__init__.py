"""Small float64 network library with analytic gradients."""
from .layers import (
    LayerSpec, Network, ShapeError, Tape, backward, concat, conv2d, conv_out, dense,
    forward, gap, init_params, softmax_head,
)
from .losses import log_softmax, nll_from_logprobs, softmax, softmax_cross_entropy
from .optim import ParamSet, adam_step, clip_by_global_norm, global_norm
from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint

__all__ = [
    "LayerSpec", "Network", "ShapeError", "Tape", "backward", "concat", "conv2d", "conv_out",
    "dense", "forward", "gap", "init_params", "softmax_head", "log_softmax",
    "nll_from_logprobs", "softmax", "softmax_cross_entropy", "ParamSet", "adam_step",
    "clip_by_global_norm", "global_norm", "FORMAT_VERSION", "load_checkpoint", "save_checkpoint",
]
