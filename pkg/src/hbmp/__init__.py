"""Hierarchical BiLSTM-max-pool sentence encoders for NLI, from scratch."""

from .tensor import Tensor, grad_check
from .recurrent import SentenceBatch
from .encoders import VARIANTS, EncoderConfig
from .model import ModelConfig, NliModel

__all__ = [
    "Tensor",
    "grad_check",
    "SentenceBatch",
    "VARIANTS",
    "EncoderConfig",
    "ModelConfig",
    "NliModel",
]
