"""Camera geometry and frame I/O."""

from .camera import (
    DepthMap,
    bin_to_depth,
    depth_to_bin,
    gamma_encode,
    lookup_depth,
    pixel_grid,
    project,
    robust_binning,
    unproject,
    unproject_with_depth,
)
from .io import FrameBundle, load_frames

__all__ = [
    "DepthMap",
    "FrameBundle",
    "bin_to_depth",
    "depth_to_bin",
    "gamma_encode",
    "load_frames",
    "lookup_depth",
    "pixel_grid",
    "project",
    "robust_binning",
    "unproject",
    "unproject_with_depth",
]
