"""Tracking and segmentation metrics."""

from .metrics import (
    PIXEL_THRESHOLDS,
    EvalInstance,
    aggregate,
    ate_3d,
    average_jaccard,
    badja_metrics,
    clustering_accuracy,
    delta_3d,
    delta_avg_2d,
    evaluate_instance,
    jaccard_per_threshold,
    mte,
    occlusion_accuracy,
    survival_rate,
)
from .report import format_report, read_report, write_report

__all__ = [
    "PIXEL_THRESHOLDS",
    "EvalInstance",
    "aggregate",
    "ate_3d",
    "average_jaccard",
    "badja_metrics",
    "clustering_accuracy",
    "delta_3d",
    "delta_avg_2d",
    "evaluate_instance",
    "jaccard_per_threshold",
    "mte",
    "occlusion_accuracy",
    "format_report",
    "read_report",
    "survival_rate",
    "write_report",
]
