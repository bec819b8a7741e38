"""Tracking metrics: position accuracy, Jaccard, occlusion, 3D error, segmentation.

2D pixel errors are measured after rescaling both axes to a 256×256 image,
except for the keypoint metrics of :func:`badja_metrics`, which use raw pixels.
All threshold comparisons are strict.
"""

from collections.abc import Iterable, Mapping
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..utils.logger import get_logger

logger = get_logger(__name__)

PIXEL_THRESHOLDS = (1.0, 2.0, 4.0, 8.0, 16.0)
SURVIVAL_THRESHOLD = 50.0
NORMALIZED_SIZE = 256.0
DELTA_3D_THRESHOLDS = (0.1, 0.2)


@dataclass
class EvalInstance:
    """Aligned predictions and ground truth for Q tracks over T frames."""

    gt_uv: np.ndarray  # (Q, T, 2)
    gt_visible: np.ndarray  # (Q, T) bool
    image_size: tuple[int, int]  # (h, w)
    pred_uv: np.ndarray | None = None
    pred_visible: np.ndarray | None = None
    gt_xyz: np.ndarray | None = None
    pred_xyz: np.ndarray | None = None
    mask_areas: np.ndarray | None = None  # (T,) or (Q, T) pixels²

    def _require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ValueError(f"EvalInstance lacks {', '.join(missing)}")

    def pixel_errors(self, normalized: bool = True) -> np.ndarray:
        """L2 pixel error per (track, frame), optionally at 256×256 resolution."""
        self._require("pred_uv")
        diff = np.asarray(self.pred_uv, dtype=np.float64) - np.asarray(self.gt_uv, dtype=np.float64)
        if normalized:
            h, w = self.image_size
            diff = diff * np.array([NORMALIZED_SIZE / w, NORMALIZED_SIZE / h])
        return np.linalg.norm(diff, axis=-1)

    def errors_3d(self) -> np.ndarray:
        self._require("pred_xyz", "gt_xyz")
        return np.linalg.norm(
            np.asarray(self.pred_xyz, dtype=np.float64) - np.asarray(self.gt_xyz, dtype=np.float64),
            axis=-1,
        )


def delta_avg_2d(inst: EvalInstance, thresholds: Iterable[float] = PIXEL_THRESHOLDS) -> float:
    """Fraction of gt-visible points within δ px, averaged over thresholds.

    Raises:
        ValueError: If no point is visible in the ground truth
    """
    visible = np.asarray(inst.gt_visible, dtype=bool)
    if not visible.any():
        raise ValueError("delta_avg_2d is undefined without ground-truth-visible points")
    errors = inst.pixel_errors()[visible]
    return float(np.mean([np.mean(errors < delta) for delta in thresholds]))


def occlusion_accuracy(inst: EvalInstance) -> float:
    """Fraction of (track, frame) pairs whose predicted visibility is correct."""
    inst._require("pred_visible")
    pred = np.asarray(inst.pred_visible, dtype=bool)
    return float(np.mean(pred == np.asarray(inst.gt_visible, dtype=bool)))


def jaccard_per_threshold(
    inst: EvalInstance, thresholds: Iterable[float] = PIXEL_THRESHOLDS
) -> list[float]:
    """Jaccard ``TP / (TP + FP + FN)`` at each threshold; ``0/0`` counts as 1.0."""
    inst._require("pred_visible")
    gt_vis = np.asarray(inst.gt_visible, dtype=bool)
    pred_vis = np.asarray(inst.pred_visible, dtype=bool)
    errors = inst.pixel_errors()
    scores = []
    for delta in thresholds:
        within = errors < delta
        tp = np.sum(pred_vis & gt_vis & within)
        fp = np.sum(pred_vis & (~gt_vis | ~within))
        fn = np.sum(gt_vis & (~pred_vis | ~within))
        denominator = tp + fp + fn
        if denominator == 0:
            logger.warning(f"Vacuous Jaccard at threshold {delta} px, counted as 1.0")
            scores.append(1.0)
        else:
            scores.append(float(tp / denominator))
    return scores


def average_jaccard(inst: EvalInstance, thresholds: Iterable[float] = PIXEL_THRESHOLDS) -> float:
    return float(np.mean(jaccard_per_threshold(inst, thresholds)))


def mte(inst: EvalInstance) -> float:
    """Median pixel error over all (track, frame) pairs.

    Raises:
        ValueError: If the instance is empty
    """
    errors = inst.pixel_errors()
    if errors.size == 0:
        raise ValueError("mte of an empty instance")
    return float(np.median(errors))


def survival_rate(inst: EvalInstance, threshold: float = SURVIVAL_THRESHOLD) -> float:
    """Mean fraction of frames before a track's error first exceeds ``threshold``."""
    errors = inst.pixel_errors()
    if errors.size == 0:
        raise ValueError("survival_rate of an empty instance")
    num_frames = errors.shape[1]
    failed = errors > threshold
    first_failure = np.where(failed.any(axis=1), failed.argmax(axis=1), num_frames)
    return float(np.mean(first_failure / num_frames))


def ate_3d(inst: EvalInstance) -> float:
    """Mean 3D Euclidean error in meters.

    Raises:
        ValueError: If the instance is empty
    """
    errors = inst.errors_3d()
    if errors.size == 0:
        raise ValueError("ate_3d of an empty instance")
    return float(errors.mean())


def delta_3d(inst: EvalInstance, threshold: float) -> float:
    """Fraction of (track, frame) pairs with 3D error below ``threshold`` meters."""
    errors = inst.errors_3d()
    if errors.size == 0:
        raise ValueError("delta_3d of an empty instance")
    return float(np.mean(errors < threshold))


def badja_metrics(inst: EvalInstance, pixel_threshold: float = 3.0) -> tuple[float, float]:
    """Keypoint accuracy ``(segA, δ3px)`` over ground-truth-visible points.

    segA counts a point accurate when its error is below ``0.2·√A`` with ``A`` the
    frame's segmentation-mask area; δ3px when it is below ``pixel_threshold``.

    Raises:
        ValueError: If mask areas are missing or not positive, or nothing is visible
    """
    inst._require("mask_areas")
    areas = np.broadcast_to(np.asarray(inst.mask_areas, dtype=np.float64), inst.gt_visible.shape)
    if np.any(areas <= 0):
        raise ValueError("Segmentation mask areas must be positive")
    visible = np.asarray(inst.gt_visible, dtype=bool)
    if not visible.any():
        raise ValueError("badja_metrics is undefined without ground-truth-visible points")
    errors = inst.pixel_errors(normalized=False)[visible]
    seg_a = float(np.mean(errors < 0.2 * np.sqrt(areas[visible])))
    delta_px = float(np.mean(errors < pixel_threshold))
    return seg_a, delta_px


def clustering_accuracy(labels: np.ndarray, gt_labels: np.ndarray) -> float:
    """Accuracy under the best one-to-one matching of predicted to true labels."""
    labels = np.asarray(labels)
    gt_labels = np.asarray(gt_labels)
    if labels.shape != gt_labels.shape:
        raise ValueError(f"Label shapes differ: {labels.shape} vs {gt_labels.shape}")
    if labels.size == 0:
        raise ValueError("clustering_accuracy of empty labelings")
    pred_values, pred_index = np.unique(labels, return_inverse=True)
    gt_values, gt_index = np.unique(gt_labels, return_inverse=True)
    confusion = np.zeros((len(pred_values), len(gt_values)), dtype=np.int64)
    np.add.at(confusion, (pred_index, gt_index), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    return float(confusion[rows, cols].sum() / labels.size)


def evaluate_instance(inst: EvalInstance) -> dict[str, float]:
    """Every metric the instance has inputs for, keyed by report name."""
    results: dict[str, float] = {}
    if inst.pred_uv is not None:
        if np.asarray(inst.gt_visible).any():
            results["delta_avg_2d"] = delta_avg_2d(inst)
        results["mte"] = mte(inst)
        results["survival"] = survival_rate(inst)
    if inst.pred_visible is not None:
        results["oa"] = occlusion_accuracy(inst)
        if inst.pred_uv is not None:
            results["aj"] = average_jaccard(inst)
    if inst.pred_xyz is not None and inst.gt_xyz is not None:
        results["ate_3d"] = ate_3d(inst)
        for threshold in DELTA_3D_THRESHOLDS:
            results[f"delta_{threshold:g}"] = delta_3d(inst, threshold)
    if inst.mask_areas is not None and inst.pred_uv is not None:
        results["seg_a"], results["delta_3px"] = badja_metrics(inst)
    return results


def aggregate(per_sequence: Iterable[Mapping[str, float]]) -> dict[str, float]:
    """Mean of each metric over the sequences that report it."""
    collected: dict[str, list[float]] = {}
    for metrics in per_sequence:
        for name, value in metrics.items():
            collected.setdefault(name, []).append(float(value))
    return {name: float(np.mean(values)) for name, values in sorted(collected.items())}
