"""Toy rectified-flow video transformer with a camera branch (requires torch)."""

from .config import GuidanceWeights, ModelConfig, NoiseSchedule, sample_noise_level
from .model import VDiT
from .sampling import guided_velocity, sample
from .training import TrainConfig, TrainData, rectified_flow_loss, train

__all__ = [
    "GuidanceWeights",
    "ModelConfig",
    "NoiseSchedule",
    "TrainConfig",
    "TrainData",
    "VDiT",
    "guided_velocity",
    "rectified_flow_loss",
    "sample",
    "sample_noise_level",
    "train",
]
