"""On-disk dataset layout: ``<root>/<split>/seq_NNNNN/`` sequence folders."""

import json
from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from ..errors import DataError
from ..geometry.io import (
    DEPTH_DIR,
    FRAME_DIR,
    INTRINSICS_FILE,
    FrameBundle,
    frame_name,
    load_frames,
    write_depth,
    write_image,
    write_intrinsics,
)
from ..schemas.models import SceneSpec, TrackRecord
from ..utils.files import atomic_write_text, read_jsonl, sha256_file, sha256_json, write_jsonl
from ..utils.logger import get_logger
from .synthetic import RenderedSequence

logger = get_logger(__name__)

TRACKS_FILE = "tracks.jsonl"
SPEC_FILE = "spec.json"
DATASET_FILE = "dataset.json"
SPLITS = ("train", "test")


@dataclass
class GroundTruth:
    """Per-track arrays aligned by track index (Q tracks × T frames)."""

    ids: np.ndarray  # (Q,)
    positions: np.ndarray  # (Q, T, 3)
    uv: np.ndarray  # (Q, T, 2)
    visible: np.ndarray  # (Q, T) bool
    body_ids: np.ndarray | None = None  # (Q,)

    @property
    def num_tracks(self) -> int:
        return int(self.ids.shape[0])

    @property
    def num_frames(self) -> int:
        return int(self.positions.shape[1])

    def subset(self, indices: np.ndarray) -> "GroundTruth":
        return GroundTruth(
            ids=self.ids[indices],
            positions=self.positions[indices],
            uv=self.uv[indices],
            visible=self.visible[indices],
            body_ids=None if self.body_ids is None else self.body_ids[indices],
        )

    def window(self, start: int, end: int) -> "GroundTruth":
        return GroundTruth(
            ids=self.ids,
            positions=self.positions[:, start:end],
            uv=self.uv[:, start:end],
            visible=self.visible[:, start:end],
            body_ids=self.body_ids,
        )


@dataclass
class SequenceData:
    name: str
    path: Path
    frames: list[FrameBundle]
    ground_truth: GroundTruth
    spec: SceneSpec | None = None


def tracks_to_records(
    ids: np.ndarray,
    positions: np.ndarray,
    uv: np.ndarray,
    visible: np.ndarray,
    body_ids: np.ndarray | None = None,
) -> list[dict[str, Any]]:
    """Flatten track arrays into records ordered by (id, frame)."""
    records = []
    for q, track_id in enumerate(ids):
        body = None if body_ids is None else int(body_ids[q])
        for t in range(positions.shape[1]):
            record = TrackRecord(
                id=int(track_id),
                frame=t,
                x3d=float(positions[q, t, 0]),
                y3d=float(positions[q, t, 1]),
                z3d=float(positions[q, t, 2]),
                u=float(uv[q, t, 0]),
                v=float(uv[q, t, 1]),
                visible=bool(visible[q, t]),
                body_id=body,
            )
            records.append(record.model_dump(exclude_none=True))
    return records


def records_to_ground_truth(
    records: Iterable[dict[str, Any]], source: str = "tracks"
) -> GroundTruth:
    """Group records by id into dense arrays.

    Raises:
        DataError: On malformed records or tracks with missing/duplicate frames
    """
    grouped: dict[int, dict[int, TrackRecord]] = defaultdict(dict)
    for raw in records:
        try:
            record = TrackRecord.model_validate(raw)
        except ValidationError as e:
            raise DataError(f"Malformed track record in {source}: {e}") from e
        if record.frame in grouped[record.id]:
            raise DataError(f"Duplicate frame {record.frame} for track {record.id} in {source}")
        grouped[record.id][record.frame] = record

    if not grouped:
        raise DataError(f"No track records in {source}")
    ids = sorted(grouped)
    num_frames = max(len(frames) for frames in grouped.values())
    positions = np.zeros((len(ids), num_frames, 3))
    uv = np.zeros((len(ids), num_frames, 2))
    visible = np.zeros((len(ids), num_frames), dtype=bool)
    body_ids: list[int | None] = []
    for q, track_id in enumerate(ids):
        frames = grouped[track_id]
        if sorted(frames) != list(range(num_frames)):
            raise DataError(
                f"Track {track_id} in {source} does not cover frames 0..{num_frames - 1}"
            )
        for t, record in frames.items():
            positions[q, t] = (record.x3d, record.y3d, record.z3d)
            uv[q, t] = (record.u, record.v)
            visible[q, t] = record.visible
        body_ids.append(frames[0].body_id)

    return GroundTruth(
        ids=np.asarray(ids, dtype=np.int64),
        positions=positions,
        uv=uv,
        visible=visible,
        body_ids=None if any(b is None for b in body_ids) else np.asarray(body_ids, dtype=np.int64),
    )


def write_sequence(
    seq_dir: str | Path,
    rendered: RenderedSequence,
    spec: SceneSpec,
    track_indices: np.ndarray | None = None,
) -> Path:
    """Write frames, depth, intrinsics, tracks and the scene spec of one sequence."""
    seq_dir = Path(seq_dir)
    for t, frame in enumerate(rendered.frames):
        image = np.round(frame.image.permute(1, 2, 0).numpy() * 255.0)
        write_image(seq_dir / FRAME_DIR / f"{frame_name(t)}.png", image)
        write_depth(seq_dir / DEPTH_DIR / f"{frame_name(t)}.raw", frame.depth.values.numpy())
    write_intrinsics(seq_dir / INTRINSICS_FILE, spec.intrinsics)

    if track_indices is None:
        track_indices = np.arange(rendered.positions.shape[0])
    tracks = rendered.subset(track_indices)
    write_jsonl(
        seq_dir / TRACKS_FILE,
        tracks_to_records(
            track_indices, tracks.positions, tracks.uv, tracks.visible, tracks.body_ids
        ),
    )
    atomic_write_text(seq_dir / SPEC_FILE, spec.model_dump_json(indent=2))
    return seq_dir


def load_ground_truth(path: str | Path) -> GroundTruth:
    return records_to_ground_truth(read_jsonl(path), source=str(path))


def load_sequence(seq_dir: str | Path, depth_dir: str | Path | None = None) -> SequenceData:
    """Load frames and ground truth of one sequence folder.

    Raises:
        DataError: If the folder is incomplete or frame/track counts disagree
    """
    seq_dir = Path(seq_dir)
    if not seq_dir.is_dir():
        raise DataError(f"Sequence directory not found: {seq_dir}")
    frames = load_frames(seq_dir, depth_dir)
    ground_truth = load_ground_truth(seq_dir / TRACKS_FILE)
    if ground_truth.num_frames != len(frames):
        raise DataError(
            f"{seq_dir.name}: {len(frames)} frames but tracks cover {ground_truth.num_frames}"
        )
    spec = None
    spec_path = seq_dir / SPEC_FILE
    if spec_path.exists():
        try:
            spec = SceneSpec.model_validate_json(spec_path.read_text(encoding="utf-8"))
        except ValidationError as e:
            raise DataError(f"Invalid scene spec {spec_path}: {e}") from e
    return SequenceData(
        name=seq_dir.name, path=seq_dir, frames=frames, ground_truth=ground_truth, spec=spec
    )


def list_sequences(root: str | Path, split: str) -> list[Path]:
    """Sorted sequence folders of a split.

    Raises:
        DataError: If the split directory is missing or empty
    """
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise DataError(f"Dataset split not found: {split_dir}")
    paths = sorted(p for p in split_dir.iterdir() if p.is_dir() and p.name.startswith("seq_"))
    if not paths:
        raise DataError(f"No sequences in {split_dir}")
    return paths


def write_dataset_manifest(root: str | Path, manifest: dict[str, Any]) -> None:
    atomic_write_text(Path(root) / DATASET_FILE, json.dumps(manifest, indent=2, sort_keys=True))


def dataset_id(root: str | Path) -> str:
    """Stable identifier of a dataset directory (hash of its manifest or folder names)."""
    root = Path(root)
    manifest = root / DATASET_FILE
    if manifest.exists():
        return sha256_file(manifest)[:16]
    names = sorted(str(p.relative_to(root)) for p in root.glob("*/seq_*"))
    return sha256_json(names)[:16]
