"""Minimal reverse-mode autodiff substrate for the encoder stack."""

from .tensor import Tensor
from .layers import (
    BatchNorm1d,
    Conv1d,
    DepthwiseConv1d,
    LayerNorm,
    Linear,
    MultiHeadSelfAttention,
    ParamStore,
)
from .optim import Adam, adam_step, lr_schedule
from .checkpoint import read_checkpoint, write_checkpoint

__all__ = [
    "Tensor",
    "ParamStore",
    "Linear",
    "LayerNorm",
    "BatchNorm1d",
    "Conv1d",
    "DepthwiseConv1d",
    "MultiHeadSelfAttention",
    "Adam",
    "adam_step",
    "lr_schedule",
    "read_checkpoint",
    "write_checkpoint",
]
