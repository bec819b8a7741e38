"""Frame bundles and on-disk formats for frames, depth and intrinsics.

Depth files are raw little-endian float32 arrays (row-major) with a ``.meta``
sidecar of ``key=value`` lines (width, height, units). Intrinsics are a
``key=value`` text file with fx, fy, cx, cy, width, height.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..errors import DataError
from ..schemas.models import CameraIntrinsics
from ..utils.files import read_key_values, write_key_values
from ..utils.logger import get_logger
from .camera import DepthMap

logger = get_logger(__name__)

FRAME_DIR = "frames"
DEPTH_DIR = "depth"
INTRINSICS_FILE = "intrinsics.txt"


@dataclass(frozen=True)
class FrameBundle:
    """One video frame: color image (3×H×W in [0, 1]), depth and intrinsics."""

    image: torch.Tensor
    depth: DepthMap
    intrinsics: CameraIntrinsics

    @property
    def height(self) -> int:
        return int(self.image.shape[1])

    @property
    def width(self) -> int:
        return int(self.image.shape[2])


def frame_name(index: int) -> str:
    return f"{index:05d}"


def write_depth(path: str | Path, values: np.ndarray) -> None:
    """Write a depth map as raw float32 plus a ``.meta`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.ascontiguousarray(values, dtype="<f4")
    path.write_bytes(array.tobytes())
    write_key_values(
        path.with_suffix(".meta"),
        {"width": array.shape[1], "height": array.shape[0], "units": "meters"},
    )


def read_depth(path: str | Path) -> DepthMap:
    """Read a raw float32 depth file using its ``.meta`` sidecar.

    Raises:
        DataError: If either file is missing or sizes disagree
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing depth file: {path}")
    meta = read_key_values(path.with_suffix(".meta"))
    try:
        width, height = int(meta["width"]), int(meta["height"])
    except (KeyError, ValueError) as e:
        raise DataError(f"Depth metadata {path.with_suffix('.meta')} lacks width/height") from e
    if meta.get("units", "meters") != "meters":
        raise DataError(f"Unsupported depth units {meta['units']!r} in {path}")
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != width * height:
        raise DataError(f"Depth file {path} has {raw.size} values, expected {width * height}")
    return DepthMap.from_values(torch.from_numpy(raw.reshape(height, width).astype(np.float32)))


def write_intrinsics(path: str | Path, K: CameraIntrinsics) -> None:
    write_key_values(path, K.model_dump())


def read_intrinsics(path: str | Path) -> CameraIntrinsics:
    """Parse an intrinsics text file.

    Raises:
        DataError: If fields are missing or invalid
    """
    values = read_key_values(path)
    try:
        return CameraIntrinsics(
            fx=float(values["fx"]),
            fy=float(values["fy"]),
            cx=float(values["cx"]),
            cy=float(values["cy"]),
            width=int(values["width"]),
            height=int(values["height"]),
        )
    except (KeyError, ValueError) as e:
        raise DataError(f"Invalid intrinsics file {path}: {e}") from e


def write_image(path: str | Path, image: np.ndarray) -> None:
    """Write an H×W×3 uint8 image losslessly (PNG)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image.astype(np.uint8)).save(path, format="PNG")


def read_image(path: str | Path) -> torch.Tensor:
    """Read an image as a 3×H×W float tensor in [0, 1]."""
    with Image.open(path) as img:
        array = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(array).permute(2, 0, 1).contiguous()


def load_frames(video_dir: str | Path, depth_dir: str | Path | None = None) -> list[FrameBundle]:
    """Load a frame directory (``frames/``, ``depth/``, ``intrinsics.txt``).

    Args:
        video_dir: Sequence directory
        depth_dir: Optional alternative depth directory (e.g. an external
            estimator's output in the same format)

    Returns:
        Frame bundles in index order

    Raises:
        DataError: If there are no frames or a frame lacks its depth file
    """
    video_dir = Path(video_dir)
    depth_root = Path(depth_dir) if depth_dir is not None else video_dir / DEPTH_DIR
    image_paths = sorted((video_dir / FRAME_DIR).glob("*.png"))
    if not image_paths:
        raise DataError(f"No frames found in {video_dir / FRAME_DIR}")

    intrinsics_path = video_dir / INTRINSICS_FILE
    first = read_image(image_paths[0])
    if intrinsics_path.exists():
        K = read_intrinsics(intrinsics_path)
    else:
        K = CameraIntrinsics.from_image_size(width=first.shape[2], height=first.shape[1])
        logger.warning(f"No intrinsics in {video_dir}, using focal length = image width ({K.fx})")

    frames = []
    for image_path in image_paths:
        depth_path = depth_root / f"{image_path.stem}.raw"
        if not depth_path.exists():
            raise DataError(f"Missing depth for frame {image_path.stem}: {depth_path}")
        image = read_image(image_path)
        depth = read_depth(depth_path)
        if (depth.height, depth.width) != (image.shape[1], image.shape[2]):
            raise DataError(f"Depth/image size mismatch at frame {image_path.stem}")
        frames.append(FrameBundle(image=image, depth=depth, intrinsics=K))
    logger.info(f"Loaded {len(frames)} frames from {video_dir}")
    return frames
