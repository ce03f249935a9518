"""Semantic tri-plane 3D portrait synthesis, inversion and interactive editing."""

__version__ = "0.1.0"

from .config import ModelConfig, RenderConfig, TrainConfig
from .camera import CameraPose

__all__ = ["ModelConfig", "RenderConfig", "TrainConfig", "CameraPose", "__version__"]
