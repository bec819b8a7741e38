"""Iterative 3D trajectory refinement within one temporal window."""

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from ..geometry.camera import gamma_encode
from ..schemas.models import CameraIntrinsics, ModelConfig
from ..utils.logger import get_logger
from ..utils.validators import ensure_finite
from .encoder import Triplane, plane_coordinates, sample_plane, sample_triplane

logger = get_logger(__name__)


@dataclass
class TrajectoryState:
    """Positions (N×T×3, meters) and point features (N×T×C) at one iteration."""

    positions: torch.Tensor
    features: torch.Tensor
    iteration: int = 0

    @property
    def num_points(self) -> int:
        return int(self.positions.shape[0])

    @property
    def window(self) -> int:
        return int(self.positions.shape[1])


@dataclass
class StepOutput:
    deltas: torch.Tensor  # N×T×3
    features: torch.Tensor  # N×T×C


@dataclass
class WindowOutput:
    """Everything one window produces.

    ``states`` and ``embeddings`` hold one entry per refinement iteration.
    """

    states: list[TrajectoryState]
    visibility_logits: torch.Tensor  # N×T
    embeddings: list[torch.Tensor] = field(default_factory=list)  # M × (N×R)

    @property
    def final(self) -> TrajectoryState:
        return self.states[-1]

    @property
    def positions(self) -> torch.Tensor:
        return self.final.positions

    @property
    def visibility(self) -> torch.Tensor:
        return torch.sigmoid(self.visibility_logits) > 0.5

    @property
    def embedding(self) -> torch.Tensor:
        return self.embeddings[-1]


def _clamp_depth(points: torch.Tensor, min_depth: float) -> torch.Tensor:
    return torch.cat([points[..., :2], points[..., 2:].clamp_min(min_depth)], dim=-1)


def sample_window_features(
    positions: torch.Tensor, triplanes: list[Triplane], K: CameraIntrinsics, min_depth: float
) -> torch.Tensor:
    """Sample ``F_t`` for every point at every frame of the window (N×T×C)."""
    if positions.shape[1] != len(triplanes):
        raise ValueError(
            f"Window has {positions.shape[1]} frames but {len(triplanes)} triplanes were given"
        )
    return torch.stack(
        [
            sample_triplane(tp, _clamp_depth(positions[:, t], min_depth), K)
            for t, tp in enumerate(triplanes)
        ],
        dim=1,
    )


def init_trajectories(
    queries: torch.Tensor,
    triplanes: list[Triplane],
    K: CameraIntrinsics,
    positions: torch.Tensor | None = None,
    min_depth: float = 1e-3,
) -> TrajectoryState:
    """Initial state: every frame holds the query position unless ``positions`` is given.

    Args:
        queries: ``(N, 3)`` query points at the window's first frame
        triplanes: One triplane per window frame
        K: Camera intrinsics
        positions: Optional ``(N, T, 3)`` initialization (propagated windows)
        min_depth: Depth floor used while sampling features

    Raises:
        ValueError: If there are no queries or the window is shorter than 2 frames
    """
    if queries.dim() != 2 or queries.shape[0] == 0:
        raise ValueError("At least one query point is required")
    window = len(triplanes)
    if window < 2:
        raise ValueError(f"Window must contain at least 2 frames, got {window}")
    if positions is None:
        positions = queries[:, None, :].expand(-1, window, -1).clone()
    elif positions.shape != (queries.shape[0], window, 3):
        raise ValueError(
            f"Initial positions shape {tuple(positions.shape)} does not match "
            f"{(queries.shape[0], window, 3)}"
        )
    features = sample_window_features(positions, triplanes, K, min_depth)
    return TrajectoryState(positions=positions, features=features, iteration=0)


def correlation_offsets(
    radius: int, device: torch.device | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Row and column offsets of the ``(2r+1)²`` correlation grid, row-major."""
    steps = torch.arange(-radius, radius + 1, device=device)
    rows, cols = torch.meshgrid(steps, steps, indexing="ij")
    return rows.flatten(), cols.flatten()


def correlation_features(
    state: TrajectoryState,
    triplanes: list[Triplane],
    K: CameraIntrinsics,
    radius: int = 3,
    min_depth: float = 1e-3,
) -> torch.Tensor:
    """Local correlation of each point feature with its triplane neighbourhood.

    For each plane, features on a ``(2r+1)²`` grid around the point's plane
    coordinate are dotted with ``F`` and divided by ``√C``. Planes are
    concatenated XY, XZ, YZ.

    Returns:
        ``N×T×3(2r+1)²`` tensor
    """
    channels = state.features.shape[-1]
    d_rows, d_cols = correlation_offsets(radius, state.positions.device)
    d_rows = d_rows.to(state.positions.dtype)
    d_cols = d_cols.to(state.positions.dtype)
    norm = math.sqrt(channels)

    per_frame = []
    for t, tp in enumerate(triplanes):
        points = _clamp_depth(state.positions[:, t], min_depth)
        u, v, b = plane_coordinates(points, K, tp.binning)
        f = state.features[:, t]
        lookups = ((tp.plane_xy, v, u), (tp.plane_xz, u, b), (tp.plane_yz, v, b))
        corr = []
        for plane, rows, cols in lookups:
            window = sample_plane(plane, rows[:, None] + d_rows, cols[:, None] + d_cols)
            corr.append((window * f[:, None, :]).sum(-1) / norm)
        per_frame.append(torch.cat(corr, dim=-1))
    return torch.stack(per_frame, dim=1)


def assemble_tokens(
    state: TrajectoryState,
    corr: torch.Tensor,
    anchors: torch.Tensor,
    bands: int,
    pe_scale: float,
) -> torch.Tensor:
    """Track tokens ``[γ(X), F, Corr, γ(X − X_1)]`` (N×T×D).

    Args:
        state: Current trajectory state
        corr: Correlation features, N×T×corr_dim
        anchors: ``(N, 3)`` positions at the window's first frame
        bands: Positional-encoding bands
        pe_scale: Length scale applied before encoding

    Raises:
        ValueError: On inconsistent shapes
    """
    n, t = state.positions.shape[:2]
    if corr.shape[:2] != (n, t) or state.features.shape[:2] != (n, t) or anchors.shape != (n, 3):
        raise ValueError(
            f"Token inputs disagree: positions {tuple(state.positions.shape)}, "
            f"features {tuple(state.features.shape)}, corr {tuple(corr.shape)}, "
            f"anchors {tuple(anchors.shape)}"
        )
    relative = state.positions - anchors[:, None, :]
    return torch.cat(
        [
            gamma_encode(state.positions, bands, pe_scale),
            state.features,
            corr,
            gamma_encode(relative, bands, pe_scale),
        ],
        dim=-1,
    )


class _AttentionBlock(nn.Module):
    """Pre-norm temporal attention, spatial attention and MLP."""

    def __init__(self, width: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm_time = nn.LayerNorm(width)
        self.attn_time = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm_space = nn.LayerNorm(width)
        self.attn_space = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm_mlp = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, width * mlp_ratio), nn.GELU(), nn.Linear(width * mlp_ratio, width)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: N×T×W. Temporal attention batches over points, spatial over frames.
        h = self.norm_time(x)
        x = x + self.attn_time(h, h, h, need_weights=False)[0]
        h = self.norm_space(x).transpose(0, 1)
        x = x + self.attn_space(h, h, h, need_weights=False)[0].transpose(0, 1)
        return x + self.mlp(self.norm_mlp(x))


class SpatioTemporalTransformer(nn.Module):
    """Token projection, factorized attention blocks and zero-initialized heads."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        width = config.model_width
        self.input_proj = nn.Linear(config.token_dim, width)
        self.time_embed = nn.Parameter(torch.randn(1, config.window, width) * 0.02)
        self.blocks = nn.ModuleList(
            _AttentionBlock(width, config.num_heads, config.mlp_ratio)
            for _ in range(config.num_blocks)
        )
        self.norm_out = nn.LayerNorm(width)
        self.delta_head = nn.Linear(width, 3)
        self.feature_head = nn.Linear(width, config.triplane_channels)
        for head in (self.delta_head, self.feature_head):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def forward(self, tokens: torch.Tensor, features: torch.Tensor) -> StepOutput:
        window = tokens.shape[1]
        if window > self.time_embed.shape[1]:
            limit = self.time_embed.shape[1]
            raise ValueError(f"Window of {window} frames exceeds model window {limit}")
        x = self.input_proj(tokens) + self.time_embed[:, :window]
        for block in self.blocks:
            x = block(x)
        x = self.norm_out(x)
        return StepOutput(
            deltas=self.delta_head(x),
            features=features + self.feature_head(x),
        )


class TrajectoryTracker(nn.Module):
    """Refines query trajectories over ``M`` iterations inside one window."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.transformer = SpatioTemporalTransformer(config)
        channels = config.triplane_channels
        self.visibility_head = nn.Sequential(
            nn.Linear(channels, channels), nn.ReLU(), nn.Linear(channels, 1)
        )
        self.rigidity_head = nn.Linear(config.token_dim, config.rigidity_dim)

    def transformer_step(self, tokens: torch.Tensor, features: torch.Tensor) -> StepOutput:
        return self.transformer(tokens, features)

    def predict_visibility(self, features: torch.Tensor) -> torch.Tensor:
        """Visibility logits (N×T) from final point features."""
        return self.visibility_head(features).squeeze(-1)

    def rigidity_embedding(self, tokens: torch.Tensor) -> torch.Tensor:
        """Temporal mean of the track tokens ``G`` projected to the rigidity space (N×R)."""
        return self.rigidity_head(tokens.mean(dim=1))

    def run_window(
        self,
        queries: torch.Tensor,
        triplanes: list[Triplane],
        K: CameraIntrinsics,
        iterations: int | None = None,
        init_positions: torch.Tensor | None = None,
    ) -> WindowOutput:
        """Initialize and refine trajectories for one window.

        Args:
            queries: ``(N, 3)`` query points
            triplanes: One triplane per window frame
            K: Camera intrinsics
            iterations: Refinement iterations, defaults to the configured ``M``
            init_positions: Optional ``(N, T, 3)`` propagated initialization; its
                first frame becomes the anchor ``X_1``

        Returns:
            WindowOutput with ``M`` intermediate states and embeddings

        Raises:
            ValueError: If ``iterations < 1`` or inputs are malformed
            NumericError: If any iteration produces non-finite values
        """
        cfg = self.config
        num_iterations = cfg.iterations if iterations is None else iterations
        if num_iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {num_iterations}")

        state = init_trajectories(queries, triplanes, K, init_positions, cfg.min_depth)
        anchors = state.positions[:, 0]
        pe_scale = triplanes[0].binning.z_max

        states: list[TrajectoryState] = []
        embeddings: list[torch.Tensor] = []
        for m in range(1, num_iterations + 1):
            corr = correlation_features(state, triplanes, K, cfg.corr_radius, cfg.min_depth)
            tokens = assemble_tokens(state, corr, anchors, cfg.pe_bands, pe_scale)
            step = self.transformer_step(tokens, state.features)
            positions = state.positions + step.deltas
            ensure_finite(positions, "positions", iteration=m)
            ensure_finite(step.features, "features", iteration=m)
            state = TrajectoryState(positions=positions, features=step.features, iteration=m)
            states.append(state)
            embeddings.append(self.rigidity_embedding(tokens))

        logits = self.predict_visibility(state.features)
        ensure_finite(logits, "visibility_logits", iteration=num_iterations)
        return WindowOutput(states=states, visibility_logits=logits, embeddings=embeddings)

    def forward(
        self, queries: torch.Tensor, triplanes: list[Triplane], K: CameraIntrinsics
    ) -> WindowOutput:
        return self.run_window(queries, triplanes, K)
