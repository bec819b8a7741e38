"""Service layer for track3d."""

from .segmentation_service import (
    SegmentationService,
    load_embeddings,
    read_labels,
    save_embeddings,
    spectral_segment,
    write_labels,
)
from .synthesis_service import SynthesisService
from .tracking_service import (
    TrackingService,
    TrackResult,
    WindowPlan,
    grid_queries,
    plan_windows,
    propagate,
    read_query_file,
    read_tracks,
    write_query_file,
    write_tracks,
)
from .training_service import TrainingService, checkpoint_name, latest_checkpoint

__all__ = [
    "SegmentationService",
    "SynthesisService",
    "TrackResult",
    "TrackingService",
    "TrainingService",
    "WindowPlan",
    "checkpoint_name",
    "grid_queries",
    "latest_checkpoint",
    "load_embeddings",
    "plan_windows",
    "propagate",
    "read_labels",
    "read_query_file",
    "read_tracks",
    "save_embeddings",
    "spectral_segment",
    "write_labels",
    "write_query_file",
    "write_tracks",
]
