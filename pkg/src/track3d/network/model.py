"""Full tracking model and its on-disk checkpoint format."""

import json
from pathlib import Path
from typing import Any

import torch
from pydantic import ValidationError
from torch import nn

from ..errors import DataError
from ..geometry.io import FrameBundle
from ..schemas.models import CameraIntrinsics, DepthBinning, ModelConfig
from ..utils.files import atomic_write_text, sha256_bytes
from ..utils.logger import get_logger
from .encoder import Triplane, TriplaneEncoder
from .tracker import TrajectoryTracker, WindowOutput

logger = get_logger(__name__)

CHECKPOINT_FORMAT = 1
WEIGHTS_FILE = "weights.pt"
MANIFEST_FILE = "manifest.json"


class Track3DModel(nn.Module):
    """Triplane encoder plus trajectory tracker."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        self.encoder = TriplaneEncoder(self.config)
        self.tracker = TrajectoryTracker(self.config)

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    def binning_for(self, z_min: float, z_max: float) -> DepthBinning:
        return DepthBinning(z_min=z_min, z_max=z_max, d=self.config.depth_bins)

    def encode(self, frames: list[FrameBundle], binning: DepthBinning) -> list[Triplane]:
        return self.encoder.encode_video(frames, binning)

    def run_window(
        self,
        queries: torch.Tensor,
        triplanes: list[Triplane],
        K: CameraIntrinsics,
        init_positions: torch.Tensor | None = None,
    ) -> WindowOutput:
        return self.tracker.run_window(queries, triplanes, K, init_positions=init_positions)

    def forward(
        self,
        frames: list[FrameBundle],
        queries: torch.Tensor,
        binning: DepthBinning,
        init_positions: torch.Tensor | None = None,
    ) -> WindowOutput:
        triplanes = self.encode(frames, binning)
        return self.run_window(queries, triplanes, frames[0].intrinsics, init_positions)

    def weights_hash(self) -> str:
        """SHA-256 over parameter names and raw tensor bytes in state-dict order."""
        chunks = []
        for name, tensor in sorted(self.state_dict().items()):
            chunks.append(name.encode())
            chunks.append(tensor.detach().cpu().contiguous().numpy().tobytes())
        return sha256_bytes(b"".join(chunks))

    def save(
        self,
        checkpoint_dir: str | Path,
        extra_state: dict[str, Any] | None = None,
        manifest_extra: dict[str, Any] | None = None,
    ) -> Path:
        """Write ``weights.pt`` and ``manifest.json`` into ``checkpoint_dir``.

        Args:
            checkpoint_dir: Target directory, created if missing
            extra_state: Additional tensors/state stored next to the weights
                (optimizer, scheduler, RNG) for resuming
            manifest_extra: Additional human-readable manifest fields

        Returns:
            The checkpoint directory
        """
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        payload = {"model": self.state_dict(), **(extra_state or {})}
        tmp = checkpoint_dir / f".{WEIGHTS_FILE}.tmp"
        torch.save(payload, tmp)
        tmp.replace(checkpoint_dir / WEIGHTS_FILE)

        manifest = {
            "format": CHECKPOINT_FORMAT,
            "model": self.config.model_dump(),
            "weights_hash": self.weights_hash(),
            **(manifest_extra or {}),
        }
        atomic_write_text(
            checkpoint_dir / MANIFEST_FILE, json.dumps(manifest, indent=2, sort_keys=True)
        )
        logger.info(f"Saved checkpoint to {checkpoint_dir}")
        return checkpoint_dir

    @staticmethod
    def read_manifest(checkpoint_dir: str | Path) -> dict[str, Any]:
        """Read and check a checkpoint manifest.

        Raises:
            DataError: If the manifest is missing, unreadable or of another format
        """
        path = Path(checkpoint_dir) / MANIFEST_FILE
        if not path.is_file():
            raise DataError(f"Checkpoint manifest not found: {path}")
        try:
            manifest: dict[str, Any] = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataError(f"Malformed checkpoint manifest {path}: {e}") from e
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise DataError(
                f"Checkpoint format {manifest.get('format')!r} not supported "
                f"(expected {CHECKPOINT_FORMAT})"
            )
        return manifest

    @classmethod
    def load(
        cls, checkpoint_dir: str | Path, map_location: str | torch.device = "cpu"
    ) -> tuple["Track3DModel", dict[str, Any]]:
        """Restore a model from a checkpoint directory.

        Returns:
            Tuple of (model, full payload including any extra state)

        Raises:
            DataError: If the checkpoint is missing or inconsistent
        """
        checkpoint_dir = Path(checkpoint_dir)
        manifest = cls.read_manifest(checkpoint_dir)
        try:
            config = ModelConfig.model_validate(manifest["model"])
        except (KeyError, ValidationError) as e:
            raise DataError(f"Checkpoint manifest has an invalid model config: {e}") from e

        weights = checkpoint_dir / WEIGHTS_FILE
        if not weights.is_file():
            raise DataError(f"Checkpoint weights not found: {weights}")
        try:
            payload = torch.load(weights, map_location=map_location, weights_only=False)
            model = cls(config)
            model.load_state_dict(payload["model"])
        except (RuntimeError, KeyError) as e:
            logger.error(f"Failed to load checkpoint {checkpoint_dir}: {e}")
            raise DataError(f"Checkpoint {checkpoint_dir} does not match its manifest: {e}") from e

        payload["manifest"] = manifest
        logger.info(f"Loaded checkpoint {checkpoint_dir} (step {manifest.get('step', '?')})")
        return model.to(map_location), payload
