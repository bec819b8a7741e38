"""Data models for track3d."""

import math
from datetime import datetime
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator


class CameraIntrinsics(BaseModel):
    """Pinhole camera intrinsics in pixels."""

    model_config = ConfigDict(frozen=True)

    fx: float = Field(..., gt=0)
    fy: float = Field(..., gt=0)
    cx: float = Field(..., ge=0)
    cy: float = Field(..., ge=0)
    width: int = Field(..., ge=1)
    height: int = Field(..., ge=1)

    @model_validator(mode="after")
    def _principal_point_inside(self) -> "CameraIntrinsics":
        if not self.cx < self.width:
            raise ValueError(f"cx={self.cx} must be < width={self.width}")
        if not self.cy < self.height:
            raise ValueError(f"cy={self.cy} must be < height={self.height}")
        return self

    @classmethod
    def from_image_size(cls, width: int, height: int) -> "CameraIntrinsics":
        """Fallback intrinsics when none are known: focal length = image width."""
        return cls(
            fx=float(width),
            fy=float(width),
            cx=width / 2.0,
            cy=height / 2.0,
            width=width,
            height=height,
        )


class DepthBinning(BaseModel):
    """Linear quantization of metric depth into ``d`` bins."""

    model_config = ConfigDict(frozen=True)

    z_min: float
    z_max: float
    d: int = Field(256, ge=2)

    @model_validator(mode="after")
    def _ordered(self) -> "DepthBinning":
        if not (math.isfinite(self.z_min) and math.isfinite(self.z_max)):
            raise ValueError("Depth bounds must be finite")
        if not self.z_min < self.z_max:
            raise ValueError(f"z_min={self.z_min} must be < z_max={self.z_max}")
        return self

    @property
    def quantum(self) -> float:
        """Metric size of one bin."""
        return (self.z_max - self.z_min) / (self.d - 1)


class LossWeights(BaseModel):
    """Weights of the total training objective."""

    alpha: float = Field(10.0, ge=0, description="Visibility weight")
    beta: float = Field(0.1, ge=0, description="ARAP weight")
    gamma_decay: float = Field(0.8, ge=0, description="Per-iteration decay of w^m")


class ModelConfig(BaseModel):
    """Network hyperparameters shared by encoder and tracker."""

    pe_bands: int = Field(10, ge=1, description="Positional-encoding bands L")
    backbone_channels: int = Field(64, ge=1)
    backbone_blocks: int = Field(4, ge=1)
    triplane_channels: int = Field(128, ge=1, description="Triplane channels C")
    completion_layers: int = Field(3, ge=1)
    depth_bins: int = Field(256, ge=2, description="Depth bins d")
    corr_radius: int = Field(3, ge=0)
    model_width: int = Field(384, ge=1)
    num_heads: int = Field(8, ge=1)
    mlp_ratio: int = Field(4, ge=1)
    num_blocks: int = Field(6, ge=1)
    rigidity_dim: int = Field(128, ge=1)
    iterations: int = Field(6, ge=1, description="Refinement iterations M")
    window: int = Field(8, ge=2, description="Sliding window length T_s")
    min_depth: float = Field(1e-3, gt=0, description="Depth floor used while sampling")

    @model_validator(mode="after")
    def _check(self) -> "ModelConfig":
        if self.window % 2:
            raise ValueError(f"window must be even, got {self.window}")
        if self.model_width % self.num_heads:
            raise ValueError("model_width must be divisible by num_heads")
        return self

    @property
    def pe_dim(self) -> int:
        return 6 * self.pe_bands

    @property
    def corr_dim(self) -> int:
        return 3 * (2 * self.corr_radius + 1) ** 2

    @property
    def token_dim(self) -> int:
        """Transformer input size D."""
        return self.pe_dim + self.triplane_channels + self.corr_dim + self.pe_dim


class TrainConfig(BaseModel):
    """Training run configuration."""

    learning_rate: float = Field(3e-4, ge=0)
    warmup_steps: int = Field(500, ge=0)
    steps: int = Field(5000, ge=1)
    batch_size: int = Field(1, ge=1, description="Sequences per optimizer step")
    grad_accum: int = Field(1, ge=1)
    grad_clip: float = Field(1.0, gt=0)
    num_queries: int = Field(256, ge=1)
    max_pairs: int | None = Field(None, ge=1, description="ARAP pair subsample size")
    seed: int = 0
    checkpoint_interval: int = Field(500, ge=1)
    eval_interval: int = Field(0, ge=0, description="0 disables periodic evaluation")
    propagated_window_prob: float = Field(
        0.0,
        ge=0,
        le=1,
        description="Chance that a sampled window is followed by the next half-overlapping "
        "window, initialized by propagation like tracking does",
    )
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    model: ModelConfig = Field(default_factory=ModelConfig)

    @property
    def ablation(self) -> str:
        return "w/o ARAP" if self.loss_weights.beta == 0 else "full"


class BodySpec(BaseModel):
    """One rigid body of a synthetic scene."""

    shape: Literal["cuboid", "sphere"] = "cuboid"
    size: tuple[float, float, float] = Field(
        (0.5, 0.5, 0.5), description="Half extents (cuboid) or radius in x (sphere)"
    )
    center: tuple[float, float, float] = (0.0, 0.0, 4.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    angular_velocity: tuple[float, float, float] = Field(
        (0.0, 0.0, 0.0), description="Rotation vector applied per frame (rad)"
    )
    num_points: int = Field(4000, ge=1)

    @property
    def bounding_radius(self) -> float:
        if self.shape == "sphere":
            return self.size[0]
        return math.sqrt(sum(s * s for s in self.size))


class SceneSpec(BaseModel):
    """Fully seeded description of a synthetic RGBD sequence."""

    seed: int = 0
    bodies: list[BodySpec] = Field(..., min_length=1, max_length=4)
    intrinsics: CameraIntrinsics
    num_frames: int = Field(24, ge=1)
    z_min: float = Field(1.5, gt=0)
    z_max: float = Field(8.0, gt=0)
    visibility_bins: int = Field(64, ge=2, description="Depth bins for the z-buffer test")

    @property
    def image_size(self) -> tuple[int, int]:
        return self.intrinsics.height, self.intrinsics.width

    @property
    def visibility_quantum(self) -> float:
        return (self.z_max - self.z_min) / (self.visibility_bins - 1)


class SynthConfig(BaseModel):
    """Dataset synthesis configuration."""

    seed: int = 0
    num_train: int = Field(20, ge=0)
    num_test: int = Field(5, ge=0)
    num_bodies: int = Field(2, ge=1, le=4)
    num_frames: int = Field(24, ge=1)
    width: int = Field(64, ge=8)
    height: int = Field(64, ge=8)
    points_per_body: int = Field(4000, ge=16)
    tracks_per_sequence: int = Field(1024, ge=1)
    max_speed: float = Field(0.05, ge=0, description="Meters per frame")
    max_spin: float = Field(0.08, ge=0, description="Radians per frame")


class TrackRecord(BaseModel):
    """One (query, frame) row of a tracks file."""

    id: int
    frame: int
    x3d: float
    y3d: float
    z3d: float
    u: float
    v: float
    visible: bool
    body_id: int | None = None


class RunManifest(BaseModel):
    """Provenance written next to every command output."""

    command: str
    config_hash: str
    checkpoint_hash: str | None = None
    dataset_id: str | None = None
    timestamp: datetime
    tool_version: str
    extra: dict[str, object] = Field(default_factory=dict)
