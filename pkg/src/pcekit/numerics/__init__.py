"""Minimal float64 tensor engine: autodiff, layers, AdamW, checkpoints."""
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import gradcheck, relative_error
from .layers import (
    LSTM,
    Embedding,
    Encoder,
    EncoderLayer,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
)
from .optim import AdamW, AdamWState, adamw_step
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    concat,
    cross_entropy,
    embedding_lookup,
    layer_norm,
    lstm_cell,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    sigmoid,
    softmax_rows,
    stack,
    tanh,
)

__all__ = [
    "AdamW", "AdamWState", "Embedding", "Encoder", "EncoderLayer", "LSTM", "LayerNorm", "Linear",
    "Module", "MultiHeadAttention", "NonFiniteError", "ShapeError", "Tensor", "add", "adamw_step",
    "concat", "cross_entropy", "embedding_lookup", "gradcheck", "layer_norm", "load_checkpoint",
    "lstm_cell", "matmul", "mean", "mul", "no_grad", "relative_error", "relu", "save_checkpoint",
    "sigmoid", "softmax_rows", "stack", "tanh",
]
