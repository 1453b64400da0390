"""Self-supervised discovery of manipulation concepts from demonstration trajectories."""

from .config import ModelConfig, TrainConfig, paper_scale, tiny_config
from .model import InfoConModel

__version__ = "0.1.0"

__all__ = ["InfoConModel", "ModelConfig", "TrainConfig", "paper_scale", "tiny_config"]
