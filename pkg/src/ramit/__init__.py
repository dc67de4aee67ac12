"""RAMiT: reciprocal attention mixing transformer for image restoration, on numpy."""

from .attention import AttentionConfig, DRamitAttention, ReciprocalCache, complexity, dramit_attention
from .checkpoint import load_checkpoint, save_checkpoint
from .model import ModelConfig, RAMiT, build_model, count_mult_adds, count_params, model_forward
from .tensor import Tape, Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig", "DRamitAttention", "ReciprocalCache", "complexity", "dramit_attention",
    "load_checkpoint", "save_checkpoint",
    "ModelConfig", "RAMiT", "build_model", "count_mult_adds", "count_params", "model_forward",
    "Tape", "Tensor", "no_grad",
]
