"""Loop-based metric implementations for cross-checking the vectorized code.

Each function walks the (track, frame) grid explicitly with plain Python
arithmetic. They are slow on purpose and only used on small instances.
"""

import itertools
import math

import numpy as np

from track3d.evaluation.metrics import (
    NORMALIZED_SIZE,
    PIXEL_THRESHOLDS,
    SURVIVAL_THRESHOLD,
    EvalInstance,
)


def _pixel_error(inst: EvalInstance, q: int, t: int, normalized: bool = True) -> float:
    h, w = inst.image_size
    sx, sy = (NORMALIZED_SIZE / w, NORMALIZED_SIZE / h) if normalized else (1.0, 1.0)
    du = (float(inst.pred_uv[q, t, 0]) - float(inst.gt_uv[q, t, 0])) * sx
    dv = (float(inst.pred_uv[q, t, 1]) - float(inst.gt_uv[q, t, 1])) * sy
    return math.sqrt(du * du + dv * dv)


def _error_3d(inst: EvalInstance, q: int, t: int) -> float:
    return math.sqrt(
        sum((float(inst.pred_xyz[q, t, a]) - float(inst.gt_xyz[q, t, a])) ** 2 for a in range(3))
    )


def _cells(inst: EvalInstance) -> list[tuple[int, int]]:
    num_tracks, num_frames = inst.gt_visible.shape
    return list(itertools.product(range(num_tracks), range(num_frames)))


def reference_delta_avg_2d(inst: EvalInstance) -> float:
    visible = [(q, t) for q, t in _cells(inst) if inst.gt_visible[q, t]]
    fractions = []
    for delta in PIXEL_THRESHOLDS:
        hits = sum(1 for q, t in visible if _pixel_error(inst, q, t) < delta)
        fractions.append(hits / len(visible))
    return sum(fractions) / len(fractions)


def reference_occlusion_accuracy(inst: EvalInstance) -> float:
    cells = _cells(inst)
    correct = sum(
        1 for q, t in cells if bool(inst.pred_visible[q, t]) == bool(inst.gt_visible[q, t])
    )
    return correct / len(cells)


def reference_average_jaccard(inst: EvalInstance) -> float:
    """Set-based Jaccard: build TP/FP/FN sets explicitly per threshold."""
    scores = []
    for delta in PIXEL_THRESHOLDS:
        within = {(q, t) for q, t in _cells(inst) if _pixel_error(inst, q, t) < delta}
        pred_visible = {(q, t) for q, t in _cells(inst) if inst.pred_visible[q, t]}
        gt_visible = {(q, t) for q, t in _cells(inst) if inst.gt_visible[q, t]}
        tp = pred_visible & gt_visible & within
        fp = pred_visible - (gt_visible & within)
        fn = gt_visible - (pred_visible & within)
        total = len(tp) + len(fp) + len(fn)
        scores.append(1.0 if total == 0 else len(tp) / total)
    return sum(scores) / len(scores)


def reference_mte(inst: EvalInstance) -> float:
    errors = sorted(_pixel_error(inst, q, t) for q, t in _cells(inst))
    mid = len(errors) // 2
    if len(errors) % 2:
        return errors[mid]
    return (errors[mid - 1] + errors[mid]) / 2.0


def reference_survival_rate(inst: EvalInstance) -> float:
    num_tracks, num_frames = inst.gt_visible.shape
    total = 0.0
    for q in range(num_tracks):
        survived = num_frames
        for t in range(num_frames):
            if _pixel_error(inst, q, t) > SURVIVAL_THRESHOLD:
                survived = t
                break
        total += survived / num_frames
    return total / num_tracks


def reference_ate_3d(inst: EvalInstance) -> float:
    cells = _cells(inst)
    return sum(_error_3d(inst, q, t) for q, t in cells) / len(cells)


def reference_delta_3d(inst: EvalInstance, threshold: float) -> float:
    cells = _cells(inst)
    return sum(1 for q, t in cells if _error_3d(inst, q, t) < threshold) / len(cells)


def reference_badja_metrics(
    inst: EvalInstance, pixel_threshold: float = 3.0
) -> tuple[float, float]:
    areas = np.broadcast_to(np.asarray(inst.mask_areas, dtype=np.float64), inst.gt_visible.shape)
    visible = [(q, t) for q, t in _cells(inst) if inst.gt_visible[q, t]]
    seg_hits = 0
    px_hits = 0
    for q, t in visible:
        error = _pixel_error(inst, q, t, normalized=False)
        if error < 0.2 * math.sqrt(float(areas[q, t])):
            seg_hits += 1
        if error < pixel_threshold:
            px_hits += 1
    return seg_hits / len(visible), px_hits / len(visible)


def reference_clustering_accuracy(labels: np.ndarray, gt_labels: np.ndarray) -> float:
    """Exhaustive search over injective label assignments."""
    pred_values = sorted(set(labels.tolist()))
    gt_values = sorted(set(gt_labels.tolist()))
    best = 0
    if len(pred_values) <= len(gt_values):
        for targets in itertools.permutations(gt_values, len(pred_values)):
            mapping = dict(zip(pred_values, targets, strict=True))
            best = max(
                best, sum(1 for p, g in zip(labels, gt_labels, strict=True) if mapping[p] == g)
            )
    else:
        for sources in itertools.permutations(pred_values, len(gt_values)):
            mapping = dict(zip(sources, gt_values, strict=True))
            best = max(
                best, sum(1 for p, g in zip(labels, gt_labels, strict=True) if mapping.get(p) == g)
            )
    return best / len(labels)
