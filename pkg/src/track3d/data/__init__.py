"""Synthetic data generation and dataset IO."""

from .dataset import (
    GroundTruth,
    SequenceData,
    dataset_id,
    list_sequences,
    load_ground_truth,
    load_sequence,
    records_to_ground_truth,
    tracks_to_records,
    write_sequence,
)
from .synthetic import (
    RenderedSequence,
    Scene,
    generate_scene,
    random_scene_spec,
    render_sequence,
    sample_queries,
)

__all__ = [
    "GroundTruth",
    "RenderedSequence",
    "Scene",
    "SequenceData",
    "dataset_id",
    "generate_scene",
    "list_sequences",
    "load_ground_truth",
    "load_sequence",
    "random_scene_spec",
    "records_to_ground_truth",
    "render_sequence",
    "sample_queries",
    "tracks_to_records",
    "write_sequence",
]
