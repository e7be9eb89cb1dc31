"""Minimal dense-tensor computation with reverse-mode differentiation."""

from .tensor import (
    Tensor,
    add,
    backward,
    compute_dtype,
    concat,
    constant,
    detach,
    exp,
    gather_rows,
    log,
    matmul,
    mean,
    minimum,
    mul,
    narrow,
    neg,
    relu,
    reshape,
    scale,
    segment_sum,
    softmax,
    sub,
    tanh,
    tensor_sum,
    transpose,
    use_dtype,
)
from .params import ParamStore, load_checkpoint
from .layers import (
    AttentionConfig,
    DeepSetEncoder,
    Linear,
    MLP,
    MultiHeadAttention,
    TYPE_EGO,
    TYPE_OTHER,
    TYPE_STATIC,
    attention,
    deepset_encode,
    mlp_forward,
    multi_head_attention,
)
from .optim import Adam, adam_update

__all__ = [
    "Tensor", "add", "backward", "compute_dtype", "concat", "constant",
    "detach", "exp", "gather_rows", "log", "matmul", "mean", "minimum", "mul", "narrow",
    "neg", "relu", "reshape", "scale", "segment_sum", "softmax", "sub",
    "tanh", "tensor_sum", "transpose", "use_dtype", "ParamStore",
    "load_checkpoint", "AttentionConfig", "DeepSetEncoder", "Linear", "MLP",
    "MultiHeadAttention", "TYPE_EGO", "TYPE_OTHER", "TYPE_STATIC",
    "attention", "deepset_encode", "mlp_forward", "multi_head_attention",
    "Adam", "adam_update",
]
