"""Pydantic data models for track3d."""

from .models import (
    BodySpec,
    CameraIntrinsics,
    DepthBinning,
    LossWeights,
    ModelConfig,
    RunManifest,
    SceneSpec,
    SynthConfig,
    TrackRecord,
    TrainConfig,
)

__all__ = [
    "BodySpec",
    "CameraIntrinsics",
    "DepthBinning",
    "LossWeights",
    "ModelConfig",
    "RunManifest",
    "SceneSpec",
    "SynthConfig",
    "TrackRecord",
    "TrainConfig",
]
