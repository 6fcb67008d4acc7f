"""Minimal numpy neural-network engine with exact backpropagation."""

from .gradcheck import grad_check, relative_error
from .layers import (Conv2d, Dense, LSTMCell, MissingCacheError, ShapeError, conv2d_backward,
                     conv2d_forward, dense_backward, dense_forward, lstm_step, lstm_step_backward,
                     same_padding)
from .optim import Adam, AdamState, adam_step, soft_update
from .params import ParameterSet, load_checkpoint, save_checkpoint

__all__ = [
    "Adam", "AdamState", "Conv2d", "Dense", "LSTMCell", "MissingCacheError", "ParameterSet",
    "ShapeError", "adam_step", "conv2d_backward", "conv2d_forward", "dense_backward",
    "dense_forward", "grad_check", "load_checkpoint", "lstm_step", "lstm_step_backward",
    "relative_error", "same_padding", "save_checkpoint", "soft_update",
]
