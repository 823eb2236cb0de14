from . import autograd
from .autograd import Tensor, backward, constant, parameter
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckResult, finite_diff_check, forward_backward
from .layers import (
    Embedding,
    FeedForward,
    Linear,
    LstmCell,
    ParameterSet,
    TransformerLayer,
    lstm_step,
    transformer_encoder_layer,
)
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "Embedding",
    "FeedForward",
    "GradCheckResult",
    "Linear",
    "LstmCell",
    "ParameterSet",
    "Tensor",
    "TransformerLayer",
    "adam_step",
    "autograd",
    "backward",
    "constant",
    "finite_diff_check",
    "forward_backward",
    "load_checkpoint",
    "lstm_step",
    "parameter",
    "save_checkpoint",
    "transformer_encoder_layer",
]
