from .checkpoint import CheckpointError, load_params, save_params
from .ops import (
    cross_attention,
    cross_attention_backward,
    cross_entropy,
    cross_entropy_backward,
    linear,
    linear_backward,
    lstm_step,
    lstm_step_backward,
    mean_pool_temporal,
    softmax,
)
from .optim import AdamWState, adamw_step

__all__ = [
    "AdamWState", "CheckpointError", "adamw_step", "cross_attention",
    "cross_attention_backward", "cross_entropy", "cross_entropy_backward",
    "linear", "linear_backward", "load_params", "lstm_step", "lstm_step_backward",
    "mean_pool_temporal", "save_params", "softmax",
]
