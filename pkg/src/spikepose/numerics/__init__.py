"""Minimal differentiable tensor substrate."""

from .checkpoint import CheckpointFormatError, read_checkpoint, write_checkpoint
from .functional import (
    BatchNormState,
    avg_pool2d,
    batch_norm,
    conv2d,
    conv_output_size,
    linear,
    matmul,
    softmax_rows,
)
from .module import IncompatibleStateError, Module
from .optim import SGD, Adam, clip_grad_norm, cosine_lr, make_optimizer, optimizer_step
from .tensor import (
    ContractError,
    DimensionError,
    NumericError,
    NumericsError,
    Parameter,
    PreconditionError,
    Tape,
    TapeStateError,
    Tensor,
    as_tensor,
    backward,
    clip_min,
    concat,
    maximum,
    sigmoid,
    stack,
)

__all__ = [
    "Adam",
    "BatchNormState",
    "CheckpointFormatError",
    "ContractError",
    "DimensionError",
    "IncompatibleStateError",
    "Module",
    "NumericError",
    "NumericsError",
    "Parameter",
    "PreconditionError",
    "SGD",
    "Tape",
    "TapeStateError",
    "Tensor",
    "as_tensor",
    "avg_pool2d",
    "backward",
    "batch_norm",
    "clip_min",
    "concat",
    "conv2d",
    "conv_output_size",
    "clip_grad_norm",
    "cosine_lr",
    "linear",
    "make_optimizer",
    "matmul",
    "maximum",
    "optimizer_step",
    "read_checkpoint",
    "sigmoid",
    "softmax_rows",
    "stack",
    "write_checkpoint",
]
