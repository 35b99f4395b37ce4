from . import tensor as ops
from .gradcheck import max_gradient_error, numeric_gradient, relative_error
from .nn import MLP, Linear, Module, parameter, to_tensor
from .optim import AdamW, CosineDecay
from .rng import RngStream, as_stream, rng_draw, row_streams
from .tensor import (
    Tensor,
    backward,
    broadcast_shape,
    elementwise,
    grad,
    matmul,
    no_grad,
)

__all__ = [
    "AdamW",
    "CosineDecay",
    "Linear",
    "MLP",
    "Module",
    "RngStream",
    "Tensor",
    "as_stream",
    "backward",
    "broadcast_shape",
    "elementwise",
    "grad",
    "matmul",
    "max_gradient_error",
    "no_grad",
    "numeric_gradient",
    "ops",
    "parameter",
    "relative_error",
    "rng_draw",
    "row_streams",
    "to_tensor",
]
