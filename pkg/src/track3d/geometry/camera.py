"""Camera model, pixel/3D lifting, positional encoding and depth binning.

All functions are pure and operate on torch tensors so they can sit inside the
autograd graph of the tracker. Pixel coordinates are ``(u, v)`` = (column, row).
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import overload

import numpy as np
import torch

from ..schemas.models import CameraIntrinsics, DepthBinning


@dataclass(frozen=True)
class DepthMap:
    """Metric depth grid (H×W) with a per-pixel validity mask."""

    values: torch.Tensor
    valid_mask: torch.Tensor

    @classmethod
    def from_values(cls, values: torch.Tensor | np.ndarray) -> "DepthMap":
        """Build a depth map; non-finite or non-positive entries are invalid."""
        values = torch.as_tensor(values)
        if not values.is_floating_point():
            values = values.float()
        valid = torch.isfinite(values) & (values > 0)
        return cls(values=torch.where(valid, values, torch.zeros_like(values)), valid_mask=valid)

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])


def pixel_grid(height: int, width: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """All integer pixel centers as an ``(H*W, 2)`` tensor of ``(u, v)``, row-major."""
    v, u = torch.meshgrid(
        torch.arange(height, dtype=dtype), torch.arange(width, dtype=dtype), indexing="ij"
    )
    return torch.stack([u.reshape(-1), v.reshape(-1)], dim=-1)


def lookup_depth(depth: DepthMap, pixels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Bilinear depth lookup that only blends valid neighbors.

    A pixel covers ``[i - 0.5, i + 0.5]`` on each axis, so coordinates within
    half a pixel of the border are inside and sample the clamped border cells.

    Args:
        depth: Depth map
        pixels: ``(N, 2)`` continuous ``(u, v)`` coordinates

    Returns:
        Tuple of ``(z, valid)``; ``z`` is 0 where ``valid`` is false
    """
    dtype = pixels.dtype
    values = depth.values.to(device=pixels.device, dtype=dtype)
    mask = depth.valid_mask.to(device=pixels.device)
    h, w = depth.height, depth.width

    u, v = pixels[:, 0], pixels[:, 1]
    inside = (u >= -0.5) & (u <= w - 0.5) & (v >= -0.5) & (v <= h - 0.5)
    u = u.clamp(0, w - 1)
    v = v.clamp(0, h - 1)
    u0 = torch.floor(u).long()
    v0 = torch.floor(v).long()
    du = u - u0.to(dtype)
    dv = v - v0.to(dtype)
    u1 = (u0 + 1).clamp(max=w - 1)
    v1 = (v0 + 1).clamp(max=h - 1)

    z = torch.zeros_like(u)
    weight_sum = torch.zeros_like(u)
    corners = (
        (v0, u0, (1 - du) * (1 - dv)),
        (v0, u1, du * (1 - dv)),
        (v1, u0, (1 - du) * dv),
        (v1, u1, du * dv),
    )
    for rows, cols, weight in corners:
        weight = weight * mask[rows, cols].to(dtype)
        z = z + weight * values[rows, cols]
        weight_sum = weight_sum + weight

    valid = inside & (weight_sum > 0)
    z = torch.where(valid, z / weight_sum.clamp_min(torch.finfo(dtype).tiny), torch.zeros_like(z))
    return z, valid


def unproject_with_depth(
    pixels: torch.Tensor, z: torch.Tensor, K: CameraIntrinsics
) -> torch.Tensor:
    """Lift pixels with known depth: ``X=(u-cx)z/fx, Y=(v-cy)z/fy, Z=z``."""
    x = (pixels[..., 0] - K.cx) * z / K.fx
    y = (pixels[..., 1] - K.cy) * z / K.fy
    return torch.stack([x, y, z], dim=-1)


def unproject(
    pixels: torch.Tensor, depth: DepthMap, K: CameraIntrinsics
) -> tuple[torch.Tensor, torch.Tensor]:
    """Lift pixels to camera-frame 3D points using the depth map.

    Args:
        pixels: ``(N, 2)`` pixel coordinates
        depth: Depth map of the frame
        K: Camera intrinsics

    Returns:
        Tuple of ``(points (N, 3), valid (N,))``. Pixels without valid depth are
        flagged and returned as the origin.
    """
    if pixels.numel() == 0:
        empty = pixels.new_zeros((0, 3))
        return empty, torch.zeros(0, dtype=torch.bool, device=pixels.device)
    z, valid = lookup_depth(depth, pixels)
    points = unproject_with_depth(pixels, z, K)
    return torch.where(valid[:, None], points, torch.zeros_like(points)), valid


def project(points: torch.Tensor, K: CameraIntrinsics) -> tuple[torch.Tensor, torch.Tensor]:
    """Perspective projection ``u=fx X/Z+cx, v=fy Y/Z+cy``.

    Args:
        points: ``(..., 3)`` camera-frame points
        K: Camera intrinsics

    Returns:
        Tuple of ``(uv (..., 2), valid (...))``; points with ``Z <= 0`` are
        flagged and projected as if ``Z = 1`` to keep values finite.
    """
    z = points[..., 2]
    valid = (z > 0) & torch.isfinite(points).all(dim=-1)
    safe_z = torch.where(valid, z, torch.ones_like(z))
    u = K.fx * points[..., 0] / safe_z + K.cx
    v = K.fy * points[..., 1] / safe_z + K.cy
    return torch.stack([u, v], dim=-1), valid


def gamma_encode(p: torch.Tensor, bands: int = 10, scale: float = 1.0) -> torch.Tensor:
    """Sinusoidal positional encoding of 3D coordinates.

    Coordinates are divided by ``scale`` and encoded as
    ``[sin(2^k π x_a) for a, k] ++ [cos(2^k π x_a) for a, k]``, giving ``6L``
    features with the sine block first.
    """
    x = p / scale
    freqs = (2.0 ** torch.arange(bands, dtype=p.dtype, device=p.device)) * math.pi
    angles = (x[..., :, None] * freqs).flatten(-2)
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


@overload
def depth_to_bin(z: torch.Tensor, binning: DepthBinning) -> torch.Tensor: ...


@overload
def depth_to_bin(z: float, binning: DepthBinning) -> float: ...


def depth_to_bin(z: torch.Tensor | float, binning: DepthBinning) -> torch.Tensor | float:
    """Continuous bin coordinate ``(d-1)(z-z_min)/(z_max-z_min)`` clamped to ``[0, d-1]``."""
    scale = (binning.d - 1) / (binning.z_max - binning.z_min)
    if isinstance(z, torch.Tensor):
        return ((z - binning.z_min) * scale).clamp(0, binning.d - 1)
    return float(min(max((z - binning.z_min) * scale, 0.0), binning.d - 1))


def bin_to_depth(b: torch.Tensor, binning: DepthBinning) -> torch.Tensor:
    """Inverse of :func:`depth_to_bin` inside the clamped range."""
    return binning.z_min + b * (binning.z_max - binning.z_min) / (binning.d - 1)


def robust_binning(
    depths: Sequence[DepthMap], d: int = 256, low: float = 1.0, high: float = 99.0
) -> DepthBinning:
    """Per-sequence binning from the 1st/99th percentile of all valid depths.

    Raises:
        ValueError: If no frame has a valid depth value
    """
    valid = [dm.values[dm.valid_mask].detach().cpu().double().numpy() for dm in depths]
    all_depths = np.concatenate(valid) if valid else np.empty(0)
    if all_depths.size == 0:
        raise ValueError("Cannot derive depth binning: no valid depth values")
    z_min, z_max = np.percentile(all_depths, [low, high])
    if z_max - z_min < 1e-3:
        z_min, z_max = z_min - 0.5e-3, z_max + 0.5e-3
    return DepthBinning(z_min=float(max(z_min, 1e-6)), z_max=float(z_max), d=d)
