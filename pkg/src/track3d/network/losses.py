"""Training objectives: trajectory, visibility, rigidity affinity and ARAP."""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from ..schemas.models import LossWeights
from ..utils.validators import ensure_finite, validate_binary

EPS = 1e-8


def step_weight(m: int, M: int, decay: float = 0.8) -> float:
    """Weight ``decay^(M-m)`` of refinement iteration ``m`` (1-based).

    Raises:
        ValueError: If ``m`` is outside ``[1, M]``
    """
    if not 1 <= m <= M:
        raise ValueError(f"Iteration {m} outside [1, {M}]")
    return float(decay ** (M - m))


def traj_loss(
    predictions: list[torch.Tensor], ground_truth: torch.Tensor, decay: float = 0.8
) -> torch.Tensor:
    """``Σ_m w^m Σ_i Σ_t ‖X^m_{i,t} − X̂_{i,t}‖_1``.

    Args:
        predictions: One N×T×3 tensor per iteration
        ground_truth: N×T×3 ground-truth positions
        decay: Per-iteration decay of ``w^m``

    Raises:
        ValueError: On shape mismatch or an empty prediction list
        NumericError: If any input contains NaN
    """
    if not predictions:
        raise ValueError("traj_loss needs at least one iteration")
    ensure_finite(ground_truth, "ground_truth")
    total = ground_truth.new_zeros(())
    num_iterations = len(predictions)
    for m, pred in enumerate(predictions, start=1):
        if pred.shape != ground_truth.shape:
            raise ValueError(
                f"Prediction shape {tuple(pred.shape)} != ground truth {tuple(ground_truth.shape)}"
            )
        ensure_finite(pred, "predictions", iteration=m)
        error = (pred - ground_truth).abs().sum()
        total = total + step_weight(m, num_iterations, decay) * error
    return total


def vis_loss(logits: torch.Tensor, gt_visibility: torch.Tensor) -> torch.Tensor:
    """Summed binary cross entropy between ``σ(logits)`` and 0/1 visibility.

    Raises:
        ValueError: If shapes differ or visibility is not binary
    """
    if logits.shape != gt_visibility.shape:
        raise ValueError(
            f"Logit shape {tuple(logits.shape)} != visibility {tuple(gt_visibility.shape)}"
        )
    target = gt_visibility.to(logits.dtype)
    validate_binary(target, "gt_visibility")
    return F.binary_cross_entropy_with_logits(logits, target, reduction="sum")


def rigidity_affinity(e_i: torch.Tensor, e_j: torch.Tensor) -> torch.Tensor:
    """Cosine similarity along the last axis; zero-norm embeddings give 0."""
    norms = e_i.norm(dim=-1) * e_j.norm(dim=-1)
    dot = (e_i * e_j).sum(-1)
    return dot / norms.clamp_min(EPS)


def affinity_matrix(embeddings: torch.Tensor) -> torch.Tensor:
    """Pairwise cosine similarities of N×R embeddings (N×N)."""
    unit = embeddings / embeddings.norm(dim=-1, keepdim=True).clamp_min(EPS)
    return unit @ unit.T


def all_pairs(n: int, device: torch.device | None = None) -> torch.Tensor:
    """All unordered pairs ``i < j`` as a 2×P index tensor."""
    return torch.triu_indices(n, n, offset=1, device=device)


def sample_pairs(
    n: int, max_pairs: int | None, generator: torch.Generator | None = None
) -> torch.Tensor:
    """All pairs, or a random subset of ``max_pairs`` of them without repetition."""
    pairs = all_pairs(n)
    if max_pairs is None or pairs.shape[1] <= max_pairs:
        return pairs
    keep = torch.randperm(pairs.shape[1], generator=generator)[:max_pairs]
    return pairs[:, keep.sort().values]


def arap_loss(
    states: list[torch.Tensor],
    embeddings: list[torch.Tensor],
    reference: torch.Tensor,
    pairs: torch.Tensor | None = None,
    decay: float = 0.8,
) -> torch.Tensor:
    """Affinity-weighted change of pairwise distances over time.

    ``Σ_m w^m Σ_t Σ_(i,j) s^m_ij |d(X^m_i,t, X^m_j,t) − d(X_i,1, X_j,1)|`` with
    ``s`` the cosine affinity clamped to ``[0, 1]``.

    Args:
        states: One N×T×3 position tensor per iteration
        embeddings: One N×R rigidity embedding per iteration
        reference: ``(N, 3)`` query-frame positions defining rest distances
        pairs: 2×P index pairs, all pairs when omitted
        decay: Per-iteration decay of ``w^m``

    Raises:
        ValueError: On mismatched iteration counts or out-of-range pairs
    """
    if len(states) != len(embeddings) or not states:
        raise ValueError(
            f"Need matching non-empty states/embeddings, got {len(states)}/{len(embeddings)}"
        )
    n = reference.shape[0]
    if pairs is None:
        pairs = all_pairs(n, reference.device)
    if pairs.numel() and (int(pairs.min()) < 0 or int(pairs.max()) >= n):
        raise ValueError(f"Pair indices must lie in [0, {n})")
    i, j = pairs[0], pairs[1]
    rest = torch.linalg.vector_norm(reference[i] - reference[j], dim=-1)

    total = reference.new_zeros(())
    num_iterations = len(states)
    for m, (positions, emb) in enumerate(zip(states, embeddings, strict=True), start=1):
        s = rigidity_affinity(emb[i], emb[j]).clamp(0.0, 1.0)
        dist = torch.linalg.vector_norm(positions[i] - positions[j], dim=-1)  # P×T
        distortion = (dist - rest[:, None]).abs()
        total = total + step_weight(m, num_iterations, decay) * (s[:, None] * distortion).sum()
    return total


@dataclass
class LossParts:
    traj: torch.Tensor
    vis: torch.Tensor
    arap: torch.Tensor

    def as_dict(self) -> dict[str, float]:
        return {
            "L_traj": float(self.traj.detach()),
            "L_vis": float(self.vis.detach()),
            "L_arap": float(self.arap.detach()),
        }


def total_loss(parts: LossParts, weights: LossWeights) -> torch.Tensor:
    """``L_traj + α L_vis + β L_arap``; ``β = 0`` drops the ARAP term exactly."""
    total = parts.traj + weights.alpha * parts.vis
    if weights.beta:
        total = total + weights.beta * parts.arap
    return total
