"""Minimal dense-tensor engine with reverse-mode autodiff."""

from .tensor import (
    Tensor, no_grad, is_recording, backward, grad,
    add, sub, mul, div, neg, pow_, square,
    exp, log, sqrt, sigmoid, softplus, tanh, sin, cos, atan2,
    leaky_relu, l2_normalize, minimum,
    matmul, conv2d, upsample2x, avg_pool2x2, im2col, col2im,
    tsum, tmean, reshape, transpose, concat, stack,
    broadcast_to, pad2d, getitem,
)
from .optim import Adam, AdamState, adam_step, ema_update
from .check import finite_difference, gradcheck

__all__ = [
    "Tensor", "no_grad", "is_recording", "backward", "grad",
    "add", "sub", "mul", "div", "neg", "pow_", "square",
    "exp", "log", "sqrt", "sigmoid", "softplus", "tanh", "sin", "cos", "atan2",
    "leaky_relu", "l2_normalize", "minimum",
    "matmul", "conv2d", "upsample2x", "avg_pool2x2", "im2col", "col2im",
    "tsum", "tmean", "reshape", "transpose", "concat", "stack",
    "broadcast_to", "pad2d", "getitem",
    "Adam", "AdamState", "adam_step", "ema_update",
    "finite_difference", "gradcheck",
]
