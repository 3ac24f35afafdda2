"""Tamper localization with a shared windowed ViT encoder, an all-MLP
segmentation head, and a masked-reconstruction auxiliary branch."""

from .data import (AugmentConfig, DatasetManifest, DistortionSpec,
                   PaddedSample, RawSample)
from .encoder import DESK_ENCODER, PAPER_ENCODER, EncoderConfig
from .model import TamperLocModel
from .trainer import StepReport, TrainConfig, Trainer

__all__ = [
    "AugmentConfig", "DatasetManifest", "DistortionSpec", "PaddedSample",
    "RawSample", "DESK_ENCODER", "PAPER_ENCODER", "EncoderConfig",
    "TamperLocModel", "StepReport", "TrainConfig", "Trainer",
]

__version__ = "0.1.0"
