"""The three generative experts: pixel-space depth, latent-space video, trajectory."""

from .action import ActionExpert, ActionExpertConfig, POSITION_SCALE
from .depth import (
    DepthExpert,
    DepthExpertConfig,
    DepthNormParams,
    denormalize_depth,
    normalize_depth,
)
from .video import FrameAutoencoder, VideoExpert, VideoExpertConfig

__all__ = [
    "ActionExpert",
    "ActionExpertConfig",
    "POSITION_SCALE",
    "DepthExpert",
    "DepthExpertConfig",
    "DepthNormParams",
    "denormalize_depth",
    "normalize_depth",
    "FrameAutoencoder",
    "VideoExpert",
    "VideoExpertConfig",
]
