"""Tensor math, autodiff, the tiny transformer, Adam, and checkpoints."""

from .autograd import Tensor, cross_entropy, no_grad, tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .model import Batch, ModelConfig, ModelParams, Transformer, init_params, make_batch, param_count
from .optim import Adam, InverseSqrtSchedule, adam_step

__all__ = [
    "Adam", "Batch", "InverseSqrtSchedule", "ModelConfig", "ModelParams", "Tensor", "Transformer",
    "adam_step", "cross_entropy", "init_params", "load_checkpoint", "make_batch", "no_grad",
    "param_count", "save_checkpoint", "tensor",
]
