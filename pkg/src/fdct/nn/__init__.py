"""Minimal tensor engine with reverse-mode autodiff."""
from .optim import AdamState, adam_step
from .params import Initializer, ParameterStore, ParameterView
from .tensor import (Tensor, add, as_tensor, avg_pool2, backward, concat, conv2d,
                     gelu, index, layer_norm, linear, matmul, mean, mul, neg,
                     relu, reshape, set_debug, softmax, square, tabs, transpose,
                     tsum, unfold, unfold_mask, upsample2, zero_grad)

__all__ = [
    "AdamState", "Initializer", "ParameterStore", "ParameterView", "Tensor",
    "adam_step", "add", "as_tensor", "avg_pool2", "backward", "concat",
    "conv2d", "gelu", "index", "layer_norm", "linear", "matmul", "mean", "mul",
    "neg", "relu", "reshape", "set_debug", "softmax", "square", "tabs",
    "transpose", "tsum", "unfold", "unfold_mask", "upsample2", "zero_grad",
]
