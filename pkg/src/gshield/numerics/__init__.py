from .tensor import (
    GradientMissingError,
    NumericsError,
    ParamGraph,
    ShapeError,
    Tensor,
)
from .ops import (
    absolute,
    add,
    bce,
    concat,
    conv2d,
    conv_out_size,
    conv_transpose2d,
    dense,
    div,
    global_avg_pool,
    leaky_relu,
    mean,
    mse,
    mul,
    neg,
    relu,
    sigmoid,
    square,
    sub,
    tsum,
)
from .optim import AdamState, adam_step
from .gradcheck import GradCheckReport, grad_check, graph_fragment

__all__ = [
    "AdamState",
    "GradCheckReport",
    "GradientMissingError",
    "NumericsError",
    "ParamGraph",
    "ShapeError",
    "Tensor",
    "absolute",
    "adam_step",
    "add",
    "bce",
    "concat",
    "conv2d",
    "conv_out_size",
    "conv_transpose2d",
    "dense",
    "div",
    "global_avg_pool",
    "grad_check",
    "graph_fragment",
    "leaky_relu",
    "mean",
    "mse",
    "mul",
    "neg",
    "relu",
    "sigmoid",
    "square",
    "sub",
    "tsum",
]
