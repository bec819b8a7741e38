"""Neural components: triplane encoder, trajectory tracker, losses and the full model."""

from .encoder import (
    FeaturedPointCloud,
    ImageBackbone,
    Triplane,
    TriplaneCompletion,
    TriplaneEncoder,
    build_featured_cloud,
    complete_triplane,
    dump_triplane,
    extract_image_features,
    sample_plane,
    sample_triplane,
    splat_to_triplane,
)
from .losses import (
    LossParts,
    affinity_matrix,
    all_pairs,
    arap_loss,
    rigidity_affinity,
    sample_pairs,
    step_weight,
    total_loss,
    traj_loss,
    vis_loss,
)
from .model import Track3DModel
from .tracker import (
    SpatioTemporalTransformer,
    StepOutput,
    TrajectoryState,
    TrajectoryTracker,
    WindowOutput,
    assemble_tokens,
    correlation_features,
    init_trajectories,
)

__all__ = [
    "FeaturedPointCloud",
    "ImageBackbone",
    "LossParts",
    "SpatioTemporalTransformer",
    "StepOutput",
    "Track3DModel",
    "TrajectoryState",
    "TrajectoryTracker",
    "Triplane",
    "TriplaneCompletion",
    "TriplaneEncoder",
    "WindowOutput",
    "affinity_matrix",
    "all_pairs",
    "arap_loss",
    "assemble_tokens",
    "build_featured_cloud",
    "complete_triplane",
    "correlation_features",
    "dump_triplane",
    "extract_image_features",
    "init_trajectories",
    "rigidity_affinity",
    "sample_pairs",
    "sample_plane",
    "sample_triplane",
    "splat_to_triplane",
    "step_weight",
    "total_loss",
    "traj_loss",
    "vis_loss",
]
