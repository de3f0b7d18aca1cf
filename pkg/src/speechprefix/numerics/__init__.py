"""Dense kernels and reverse-mode differentiation with trainable-id masks."""
from .tensor import TRAIN_DTYPE, WIDE_DTYPE, Graph, Parameter, Tensor, active_graph, backward
from . import ops
from .ops import (
    add, as_tensor, concat, cross_entropy, dropout, embedding, gelu, gelu_scalar, getitem,
    gru, layer_norm, linear, matmul, mean, mse_loss, mul, reduce_sum, reshape, sigmoid,
    softmax, sub, tanh, transpose,
)
from .gradcheck import max_relative_error, numerical_grad, relative_error

__all__ = [
    "TRAIN_DTYPE", "WIDE_DTYPE", "Graph", "Parameter", "Tensor", "active_graph", "backward",
    "ops", "add", "as_tensor", "concat", "cross_entropy", "dropout", "embedding", "gelu",
    "gelu_scalar", "getitem", "gru", "layer_norm", "linear", "matmul", "mean", "mse_loss",
    "mul", "reduce_sum", "reshape", "sigmoid", "softmax", "sub", "tanh", "transpose",
    "numerical_grad", "relative_error", "max_relative_error",
]
