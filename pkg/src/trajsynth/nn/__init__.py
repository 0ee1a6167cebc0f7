"""Numerical core: transformer, optimizer, checkpointing, kernel backends."""

from .checkpoint import load_checkpoint, save_checkpoint
from .kernels import BACKEND as KERNEL_BACKEND
from .model import (HEAD_LM, HEAD_SCORE, ModelConfig, Transformer, param_count,
                    paper_scale_config)
from .optim import AdamW

__all__ = [
    "AdamW", "HEAD_LM", "HEAD_SCORE", "KERNEL_BACKEND", "ModelConfig",
    "Transformer", "load_checkpoint", "param_count", "paper_scale_config",
    "save_checkpoint",
]
