"""Minimal dense-tensor engine: tape autodiff, layers, losses and Adam."""

from .conv import conv2d, conv2d_transpose
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .init import uniform_fan_in, zeros
from .losses import adversarial_loss, generator_loss, mse_loss
from .lstm import LSTMWeights, lstm_cell, lstm_sequence
from .ops import (
    add, clip, concat, div, getitem, linear, log, matmul, mean, mul, relu, reshape,
    sigmoid, square, stack, sub, sum, tanh, transpose, where,
)
from .optim import AdamState, adam_step, init_adam
from .tensor import Tape, Tensor, active_tape, as_tensor

__all__ = [
    "Tensor", "Tape", "active_tape", "as_tensor",
    "add", "sub", "mul", "div", "matmul", "linear", "relu", "sigmoid", "tanh", "log", "square",
    "clip", "sum", "mean", "reshape", "transpose", "getitem", "concat", "stack", "where",
    "conv2d", "conv2d_transpose", "LSTMWeights", "lstm_cell", "lstm_sequence",
    "mse_loss", "adversarial_loss", "generator_loss",
    "AdamState", "init_adam", "adam_step",
    "uniform_fan_in", "zeros",
    "check_gradients", "numerical_gradient", "relative_error",
]
