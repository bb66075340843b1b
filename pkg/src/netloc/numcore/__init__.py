"""Matrix autodiff engine, optimizers, eigendecomposition, checkpoints."""

from .engine import (
    DiffGraph,
    EdgeSet,
    Tensor,
    absolute,
    add,
    argmax_rows,
    concat_cols,
    concat_rows,
    dropout,
    edge_abs_diff_score,
    edge_aggregate,
    edge_pair_score,
    edge_softmax,
    edge_to_dense,
    frobenius_sq,
    gather_rows,
    hadamard,
    leaky_relu,
    matmul,
    relu,
    row_max,
    row_softmax,
    scalar_mul,
    set_check_finite,
    sigmoid,
    slice_rows,
    subtract,
    sum_all,
    tanh,
    transpose,
)
from .eig import eig_symmetric
from .optim import AdamState, adam_step, sgd_step
from .checkpoint import load_tensors, save_tensors

__all__ = [
    "DiffGraph", "EdgeSet", "Tensor",
    "absolute", "add", "argmax_rows", "concat_cols", "concat_rows",
    "dropout", "edge_abs_diff_score", "edge_aggregate", "edge_pair_score",
    "edge_softmax", "edge_to_dense", "frobenius_sq", "gather_rows",
    "hadamard", "leaky_relu", "matmul", "relu", "row_max", "row_softmax",
    "scalar_mul", "set_check_finite", "sigmoid", "slice_rows", "subtract",
    "sum_all", "tanh", "transpose",
    "eig_symmetric",
    "AdamState", "adam_step", "sgd_step",
    "load_tensors", "save_tensors",
]
