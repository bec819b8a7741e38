"""Sliding-window tracking of query pixels through a whole video."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..data.dataset import GroundTruth, load_ground_truth, tracks_to_records
from ..errors import DataError, NumericError
from ..geometry.camera import project, robust_binning, unproject
from ..geometry.io import FrameBundle
from ..network.model import Track3DModel
from ..schemas.models import DepthBinning
from ..utils.files import atomic_write_text, write_jsonl
from ..utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class WindowPlan:
    """Half-overlapping ``(start, end)`` spans covering a video."""

    spans: tuple[tuple[int, int], ...]
    video_length: int
    window: int

    def __len__(self) -> int:
        return len(self.spans)

    def owner(self, frame: int) -> int:
        """Index of the window whose output is kept for ``frame`` (the latest covering it)."""
        for k in range(len(self.spans) - 1, -1, -1):
            start, end = self.spans[k]
            if start <= frame < end:
                return k
        raise ValueError(f"Frame {frame} outside video of length {self.video_length}")


def plan_windows(video_length: int, window: int) -> WindowPlan:
    """Windows of ``window`` frames every ``window/2`` frames.

    The last window is shifted back so it ends on the final frame.

    Raises:
        ValueError: If ``window`` is odd or the video is shorter than one window
    """
    if window < 2 or window % 2:
        raise ValueError(f"Window length must be even and >= 2, got {window}")
    if video_length < window:
        raise ValueError(
            f"Video of {video_length} frames is shorter than the {window}-frame window"
        )
    stride = window // 2
    starts = list(range(0, video_length - window + 1, stride))
    if starts[-1] + window < video_length:
        starts.append(video_length - window)
    spans = tuple((s, s + window) for s in starts)
    return WindowPlan(spans=spans, video_length=video_length, window=window)


def propagate(
    prev_positions: torch.Tensor, prev_span: tuple[int, int], next_span: tuple[int, int]
) -> torch.Tensor:
    """Initialization of the next window from the previous window's output.

    Frames shared with the previous window copy its positions; the remaining
    frames repeat the last copied frame.

    Raises:
        ValueError: If the windows do not overlap or shapes disagree
    """
    window = next_span[1] - next_span[0]
    if prev_positions.shape[1] != prev_span[1] - prev_span[0]:
        raise ValueError(
            f"Previous positions cover {prev_positions.shape[1]} frames, span {prev_span} expected"
        )
    if prev_positions.shape[1] != window:
        raise ValueError(f"Windows differ in length: {prev_positions.shape[1]} vs {window}")
    overlap = prev_span[1] - next_span[0]
    if not 0 < overlap <= window or next_span[0] < prev_span[0]:
        raise ValueError(f"Windows {prev_span} and {next_span} are not adjacent")
    copied = prev_positions[:, window - overlap :]
    repeated = copied[:, -1:].expand(-1, window - overlap, -1)
    return torch.cat([copied, repeated], dim=1)


@dataclass
class TrackResult:
    """Full-video tracks of N queries over L frames."""

    positions: np.ndarray  # (N, L, 3)
    uv: np.ndarray  # (N, L, 2)
    visible: np.ndarray  # (N, L) bool
    query_pixels: np.ndarray  # (N, 2)
    embeddings: np.ndarray | None = None  # (N, R)
    ids: np.ndarray | None = None  # (N,), defaults to 0..N-1

    @property
    def num_tracks(self) -> int:
        return int(self.positions.shape[0])

    @property
    def num_frames(self) -> int:
        return int(self.positions.shape[1])

    def track_ids(self) -> np.ndarray:
        return np.arange(self.num_tracks) if self.ids is None else np.asarray(self.ids)


def grid_queries(cols: int, rows: int, width: int, height: int) -> torch.Tensor:
    """Evenly spaced interior query pixels, row-major, as ``(cols*rows, 2)`` ``(u, v)``."""
    us = np.linspace(0.0, width - 1.0, cols + 2)[1:-1]
    vs = np.linspace(0.0, height - 1.0, rows + 2)[1:-1]
    grid_v, grid_u = np.meshgrid(vs, us, indexing="ij")
    return torch.from_numpy(np.stack([grid_u.ravel(), grid_v.ravel()], axis=-1)).float()


def read_query_file(path: str | Path) -> tuple[np.ndarray, torch.Tensor]:
    """Read pixel queries, one per line; ``#`` starts a comment.

    A line is either ``u v`` or ``id u v``. Queries without an id are numbered
    by their position in the file.

    Returns:
        Tuple of (ids (N,), pixels (N, 2))

    Raises:
        DataError: If the file is missing, malformed, empty or repeats an id
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Query file not found: {path}")
    ids: list[int] = []
    queries = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        try:
            if len(parts) == 2:
                ids.append(len(queries))
            elif len(parts) == 3:
                ids.append(int(parts.pop(0)))
            else:
                raise ValueError(f"expected 2 or 3 values, got {len(parts)}")
            queries.append((float(parts[0]), float(parts[1])))
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: invalid query line: {e}") from e
    if not queries:
        raise DataError(f"No queries in {path}")
    if len(set(ids)) != len(ids):
        raise DataError(f"Duplicate query ids in {path}")
    return np.asarray(ids, dtype=np.int64), torch.tensor(queries, dtype=torch.float32)


def write_query_file(path: str | Path, ids: np.ndarray, pixels: np.ndarray) -> None:
    """Write ``id u v`` lines readable by :func:`read_query_file`."""
    lines = [
        f"{int(i)} {float(u):.6f} {float(v):.6f}\n"
        for i, (u, v) in zip(ids, pixels, strict=True)
    ]
    atomic_write_text(path, "".join(lines))


def write_tracks(path: str | Path, result: TrackResult, labels: np.ndarray | None = None) -> int:
    """Write one record per (query, frame); ``labels`` fill the ``body_id`` field."""
    return write_jsonl(
        path,
        tracks_to_records(result.track_ids(), result.positions, result.uv, result.visible, labels),
    )


def read_tracks(path: str | Path) -> GroundTruth:
    return load_ground_truth(path)


class TrackingService:
    """Runs a model over a video window by window."""

    def __init__(self, model: Track3DModel):
        self.model = model

    @property
    def window(self) -> int:
        return self.model.config.window

    def valid_query_mask(self, frames: list[FrameBundle], pixels: torch.Tensor) -> torch.Tensor:
        """Which query pixels have valid frame-0 depth."""
        first = frames[0]
        _, valid = unproject(pixels.to(first.depth.values.dtype), first.depth, first.intrinsics)
        return valid

    def lift_queries(self, frames: list[FrameBundle], pixels: torch.Tensor) -> torch.Tensor:
        """3D query points from frame-0 depth.

        Raises:
            DataError: If any query pixel lies outside the image or has no valid depth
        """
        first = frames[0]
        pixels = pixels.to(first.depth.values.dtype)
        points, valid = unproject(pixels, first.depth, first.intrinsics)
        if not bool(valid.all()):
            bad = torch.nonzero(~valid).flatten().tolist()
            suffix = "..." if len(bad) > 10 else ""
            raise DataError(f"Queries without valid frame-0 depth: {bad[:10]}{suffix}")
        return points

    def track_video(
        self,
        frames: list[FrameBundle],
        query_pixels: torch.Tensor,
        binning: DepthBinning | None = None,
    ) -> TrackResult:
        """Track frame-0 query pixels through every frame.

        Args:
            frames: Video frames sharing one set of intrinsics
            query_pixels: ``(N, 2)`` pixel queries in frame 0
            binning: Depth binning, derived from the video's depth when omitted

        Returns:
            TrackResult; overlapped frames keep the later window's output

        Raises:
            ValueError: If the video is shorter than one window
            DataError: If queries cannot be lifted to 3D
            NumericError: If a window produces non-finite values (diagnostics name the window)
        """
        plan = plan_windows(len(frames), self.window)
        K = frames[0].intrinsics
        logger.info(
            f"Tracking {query_pixels.shape[0]} queries over {len(frames)} frames "
            f"in {len(plan)} windows"
        )
        if binning is None:
            binning = robust_binning([f.depth for f in frames], d=self.model.config.depth_bins)

        self.model.eval()
        device = self.model.device
        with torch.no_grad():
            queries = self.lift_queries(frames, query_pixels).to(device)
            triplanes = self.model.encode(frames, binning)

            num_queries = queries.shape[0]
            positions = torch.zeros(num_queries, len(frames), 3, device=device)
            visible = torch.zeros(num_queries, len(frames), dtype=torch.bool, device=device)
            embeddings = []
            prev_positions: torch.Tensor | None = None
            for k, (start, end) in enumerate(plan.spans):
                init = None
                if prev_positions is not None:
                    init = propagate(prev_positions, plan.spans[k - 1], (start, end))
                anchors = queries if init is None else init[:, 0]
                try:
                    out = self.model.run_window(anchors, triplanes[start:end], K, init)
                except NumericError as e:
                    logger.error(f"Window {k} ({start}, {end}) failed: {e}")
                    raise NumericError(
                        f"Tracking failed in window {k}", {**e.diagnostics, "window": k}
                    ) from e
                positions[:, start:end] = out.positions
                visible[:, start:end] = out.visibility
                embeddings.append(F.normalize(out.embedding, dim=-1))
                prev_positions = out.positions
                logger.debug(f"Window {k} ({start}, {end}) done")

            uv, _ = project(positions, K)
            embedding = torch.stack(embeddings).mean(dim=0)

        logger.info(f"Tracked {num_queries} queries through {len(frames)} frames")
        return TrackResult(
            positions=positions.cpu().double().numpy(),
            uv=uv.cpu().double().numpy(),
            visible=visible.cpu().numpy(),
            query_pixels=query_pixels.cpu().double().numpy(),
            embeddings=embedding.cpu().double().numpy(),
        )
