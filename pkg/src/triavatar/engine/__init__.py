"""Autodiff tensor engine: Tensor graph, ops, Adam/EMA, gradcheck, checkpoints."""

from .tensor import (
    DEFAULT_DTYPE,
    EngineError,
    ShapeError,
    Tensor,
    UnsupportedOpError,
    abs_,
    accumulate,
    add,
    backward,
    bilinear_sample,
    concat,
    conv1d,
    conv2d,
    cumsum,
    div,
    exp,
    frozen,
    getitem,
    grads_of,
    leaky_relu,
    make_node,
    matmul,
    mean,
    mul,
    neg,
    permute,
    pow_,
    reshape,
    sigmoid,
    softplus,
    sqrt,
    square,
    sub,
    sum_,
    tensor,
    upsample2x,
    zero_grads,
)
from .optim import EMA, Adam, checksum
from .gradcheck import GradCheckReport, check_gradients, fd_gradient, rel_error
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
