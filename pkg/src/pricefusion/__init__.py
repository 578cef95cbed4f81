"""Multimodal cellphone price-range classification toolkit."""

from .models import (
    build_model,
    build_model_1,
    build_model_2,
    build_model_3,
    build_model_4,
    build_model_5,
    extract_fused,
    load_checkpoint,
    save_checkpoint,
)
from .rng import Rng
from .tensor import Tensor, load_pft, save_pft
from .train import TrainingConfig, train

__version__ = "0.1.0"

__all__ = [
    "Rng",
    "Tensor",
    "TrainingConfig",
    "build_model",
    "build_model_1",
    "build_model_2",
    "build_model_3",
    "build_model_4",
    "build_model_5",
    "extract_fused",
    "load_checkpoint",
    "load_pft",
    "save_checkpoint",
    "save_pft",
    "train",
]
