"""Minimal float64 tensor/autodiff substrate shared by every learned model."""

from . import checkpoint
from .gradcheck import grad_check
from .layers import (
    Dense,
    LayerNorm,
    MultiHeadAttention,
    TransformerBlock,
    dense_forward,
    sinusoidal_embed,
    uniform_init,
)
from .optim import Adam
from .params import ParamStore
from .tensor import (
    Tensor,
    concat,
    conv2d,
    leaky_relu,
    log_softmax,
    matmul,
    softmax,
    texp,
    tlog,
    tmean,
    tsqrt,
    tsum,
    ttanh,
    upsample2x,
)

__all__ = [
    "Adam",
    "Dense",
    "LayerNorm",
    "MultiHeadAttention",
    "ParamStore",
    "Tensor",
    "TransformerBlock",
    "checkpoint",
    "concat",
    "conv2d",
    "dense_forward",
    "grad_check",
    "leaky_relu",
    "log_softmax",
    "matmul",
    "sinusoidal_embed",
    "softmax",
    "texp",
    "tlog",
    "tmean",
    "tsqrt",
    "tsum",
    "ttanh",
    "uniform_init",
    "upsample2x",
]
