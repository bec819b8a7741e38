"""Triplane encoding of RGBD frames.

A frame is turned into a featured point cloud (image feature ++ positional
encoding of the unprojected 3D point), average-splatted onto three orthogonal
planes indexed by ``(u, v, b)`` - pixel column, pixel row and depth bin - and
completed with small convolution stacks. Planes are stored channel-first:

    plane_xy: C × h × w   (rows v, cols u)
    plane_xz: C × w × d   (rows u, cols b)
    plane_yz: C × h × d   (rows v, cols b)
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..geometry.camera import depth_to_bin, gamma_encode, project, unproject_with_depth
from ..geometry.io import FrameBundle
from ..schemas.models import CameraIntrinsics, DepthBinning, ModelConfig
from ..utils.files import write_key_values
from ..utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class FeaturedPointCloud:
    """Unprojected valid-depth pixels with their features."""

    points: torch.Tensor  # (P, 3)
    features: torch.Tensor  # (P, backbone_channels + 6L)
    uv: torch.Tensor  # (P, 2) source pixel coordinates
    image_size: tuple[int, int]  # (h, w)

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass
class Triplane:
    """Three orthogonal feature planes describing one frame."""

    plane_xy: torch.Tensor
    plane_xz: torch.Tensor
    plane_yz: torch.Tensor
    binning: DepthBinning

    @property
    def channels(self) -> int:
        return int(self.plane_xy.shape[0])

    @property
    def image_size(self) -> tuple[int, int]:
        return int(self.plane_xy.shape[1]), int(self.plane_xy.shape[2])

    def planes(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.plane_xy, self.plane_xz, self.plane_yz


class _ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, padding_mode="replicate")
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, padding_mode="replicate")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(x + self.conv2(F.relu(self.conv1(x))))


class ImageBackbone(nn.Module):
    """Residual CNN producing a feature pyramid at strides 1, 2 and 4.

    The stride-1 level is a top-down fusion of all three levels so a single
    per-pixel vector carries multi-scale context. Replicate padding keeps the
    network translation-equivariant on constant borders.
    """

    stride = 4

    def __init__(self, channels: int = 64, blocks: int = 4):
        super().__init__()
        self.channels = channels
        self.stem = nn.Conv2d(3, channels, 3, padding=1, padding_mode="replicate")
        self.blocks = nn.Sequential(*[_ResidualBlock(channels) for _ in range(blocks)])
        self.down2 = nn.Conv2d(channels, channels, 3, stride=2, padding=1, padding_mode="replicate")
        self.down4 = nn.Conv2d(channels, channels, 3, stride=2, padding=1, padding_mode="replicate")
        self.lateral2 = nn.Conv2d(channels, channels, 1)
        self.lateral4 = nn.Conv2d(channels, channels, 1)

    def forward(self, images: torch.Tensor) -> list[torch.Tensor]:
        h, w = images.shape[-2:]
        pad_h = (-h) % self.stride
        pad_w = (-w) % self.stride
        if pad_h or pad_w:
            images = F.pad(images, (0, pad_w, 0, pad_h), mode="replicate")

        f1 = self.blocks(F.relu(self.stem(images)))
        f2 = F.relu(self.down2(f1))
        f4 = F.relu(self.down4(f2))
        size = f1.shape[-2:]
        fused = (
            f1
            + F.interpolate(self.lateral2(f2), size=size, mode="bilinear", align_corners=False)
            + F.interpolate(self.lateral4(f4), size=size, mode="bilinear", align_corners=False)
        )
        return [
            fused[..., :h, :w],
            f2[..., : -(-h // 2), : -(-w // 2)],
            f4[..., : -(-h // 4), : -(-w // 4)],
        ]


class _PlaneCompletion(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, layers: int):
        super().__init__()
        self.proj = nn.Conv2d(in_channels, out_channels, 1, bias=False)
        self.layers = nn.ModuleList(
            nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False) for _ in range(layers)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.proj(x)
        r = h
        for i, conv in enumerate(self.layers):
            r = conv(r)
            if i < len(self.layers) - 1:
                r = F.relu(r)
        return h + r


class TriplaneCompletion(nn.Module):
    """One completion stack per plane type (XY, XZ, YZ)."""

    def __init__(self, in_channels: int, out_channels: int = 128, layers: int = 3):
        super().__init__()
        self.out_channels = out_channels
        self.xy = _PlaneCompletion(in_channels, out_channels, layers)
        self.xz = _PlaneCompletion(in_channels, out_channels, layers)
        self.yz = _PlaneCompletion(in_channels, out_channels, layers)


def extract_image_features(image: torch.Tensor, backbone: ImageBackbone) -> list[torch.Tensor]:
    """Run the backbone on one image (3×H×W) or a batch (B×3×H×W).

    Raises:
        ValueError: If the image has zero size
    """
    if image.numel() == 0 or min(image.shape[-2:]) == 0:
        raise ValueError(f"Cannot extract features from empty image of shape {tuple(image.shape)}")
    batched = image.dim() == 4
    levels = backbone(image if batched else image[None])
    return levels if batched else [level[0] for level in levels]


def build_featured_cloud(
    frame: FrameBundle, feats: list[torch.Tensor], bands: int, pe_scale: float
) -> FeaturedPointCloud:
    """One point per valid-depth pixel with feature ``image_feature ++ γ(X, Y, Z)``."""
    finest = feats[0]
    device = finest.device
    h, w = frame.depth.height, frame.depth.width
    if tuple(finest.shape[-2:]) != (h, w):
        raise ValueError(f"Feature map {tuple(finest.shape[-2:])} not aligned with depth {(h, w)}")

    rows, cols = torch.nonzero(frame.depth.valid_mask.to(device), as_tuple=True)
    uv = torch.stack([cols, rows], dim=-1).to(finest.dtype)
    z = frame.depth.values.to(device=device, dtype=finest.dtype)[rows, cols]
    points = unproject_with_depth(uv, z, frame.intrinsics)
    image_feats = finest[:, rows, cols].T
    features = torch.cat([image_feats, gamma_encode(points, bands, pe_scale)], dim=-1)
    return FeaturedPointCloud(points=points, features=features, uv=uv, image_size=(h, w))


def _average_splat(
    rows: torch.Tensor, cols: torch.Tensor, values: torch.Tensor, height: int, width: int
) -> torch.Tensor:
    """Bilinear average splatting of ``values`` (P×C) onto a C×H×W grid."""
    channels = values.shape[1]
    accum = values.new_zeros(height * width, channels)
    weights = values.new_zeros(height * width)
    if values.shape[0]:
        r0 = torch.floor(rows)
        c0 = torch.floor(cols)
        fr = rows - r0
        fc = cols - c0
        r0 = r0.long()
        c0 = c0.long()
        corners = (
            (0, 0, (1 - fr) * (1 - fc)),
            (1, 0, fr * (1 - fc)),
            (0, 1, (1 - fr) * fc),
            (1, 1, fr * fc),
        )
        for dr, dc, weight in corners:
            r = r0 + dr
            c = c0 + dc
            keep = (weight > 0) & (r >= 0) & (r < height) & (c >= 0) & (c < width)
            index = (r * width + c)[keep]
            kept_weight = weight[keep]
            accum = accum.index_add(0, index, values[keep] * kept_weight[:, None])
            weights = weights.index_add(0, index, kept_weight)
    touched = weights > 0
    averaged = accum / weights.clamp_min(torch.finfo(values.dtype).tiny)[:, None]
    averaged = torch.where(touched[:, None], averaged, torch.zeros_like(averaged))
    return averaged.T.reshape(channels, height, width)


def splat_to_triplane(cloud: FeaturedPointCloud, binning: DepthBinning) -> Triplane:
    """Average-splat a featured cloud onto the XY, XZ and YZ planes.

    Each point lands at ``(u, v)`` on XY, ``(u, b)`` on XZ and ``(v, b)`` on YZ
    with ``b = depth_to_bin(Z)``; untouched cells stay zero.
    """
    h, w = cloud.image_size
    d = binning.d
    u, v = cloud.uv[:, 0], cloud.uv[:, 1]
    b = depth_to_bin(cloud.points[:, 2], binning)
    return Triplane(
        plane_xy=_average_splat(v, u, cloud.features, h, w),
        plane_xz=_average_splat(u, b, cloud.features, w, d),
        plane_yz=_average_splat(v, b, cloud.features, h, d),
        binning=binning,
    )


def complete_triplane(raw: Triplane, completion: TriplaneCompletion) -> Triplane:
    """Apply the per-plane completion networks; spatial shapes are preserved."""
    return Triplane(
        plane_xy=completion.xy(raw.plane_xy[None])[0],
        plane_xz=completion.xz(raw.plane_xz[None])[0],
        plane_yz=completion.yz(raw.plane_yz[None])[0],
        binning=raw.binning,
    )


def sample_plane(plane: torch.Tensor, rows: torch.Tensor, cols: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample a C×H×W plane at continuous ``(rows, cols)``.

    Coordinates outside the plane clamp to the border.

    Returns:
        Tensor of shape ``rows.shape + (C,)``
    """
    channels, height, width = plane.shape
    shape = rows.shape
    x = 2 * cols / max(width - 1, 1) - 1
    y = 2 * rows / max(height - 1, 1) - 1
    grid = torch.stack([x, y], dim=-1).reshape(1, -1, 1, 2).to(plane.dtype)
    sampled = F.grid_sample(
        plane[None], grid, mode="bilinear", padding_mode="border", align_corners=True
    )
    return sampled[0, :, :, 0].T.reshape(*shape, channels)


def plane_coordinates(
    points: torch.Tensor, K: CameraIntrinsics, binning: DepthBinning
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Continuous ``(u, v, b)`` triplane coordinates of camera-frame points."""
    uv, _ = project(points, K)
    return uv[..., 0], uv[..., 1], depth_to_bin(points[..., 2], binning)


def sample_triplane(tp: Triplane, points: torch.Tensor, K: CameraIntrinsics) -> torch.Tensor:
    """Feature of 3D points: sum of bilinear samples from the three planes.

    Args:
        tp: Triplane of the frame the points live in
        points: ``(..., 3)`` camera-frame points
        K: Camera intrinsics of the frame

    Returns:
        ``(..., C)`` features

    Raises:
        ValueError: If any point has ``Z <= 0``
    """
    if bool((points[..., 2] <= 0).any()):
        raise ValueError("Cannot sample triplane at points with Z <= 0")
    u, v, b = plane_coordinates(points, K, tp.binning)
    return (
        sample_plane(tp.plane_xy, v, u)
        + sample_plane(tp.plane_xz, u, b)
        + sample_plane(tp.plane_yz, v, b)
    )


class TriplaneEncoder(nn.Module):
    """Backbone + splatting + completion: FrameBundle -> Triplane."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.backbone = ImageBackbone(config.backbone_channels, config.backbone_blocks)
        self.completion = TriplaneCompletion(
            config.backbone_channels + config.pe_dim,
            config.triplane_channels,
            config.completion_layers,
        )

    def forward(self, frame: FrameBundle, binning: DepthBinning) -> Triplane:
        device = next(self.parameters()).device
        dtype = next(self.parameters()).dtype
        feats = extract_image_features(frame.image.to(device=device, dtype=dtype), self.backbone)
        cloud = build_featured_cloud(frame, feats, self.config.pe_bands, binning.z_max)
        raw = splat_to_triplane(cloud, binning)
        return complete_triplane(raw, self.completion)

    def encode_video(self, frames: list[FrameBundle], binning: DepthBinning) -> list[Triplane]:
        """Encode every frame independently."""
        logger.debug(f"Encoding {len(frames)} frames into triplanes (d={binning.d})")
        return [self(frame, binning) for frame in frames]


def dump_triplane(tp: Triplane, out_dir: str | Path) -> None:
    """Write planes as raw float32 arrays plus a text manifest for debugging."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, object] = {
        "channels": tp.channels,
        "z_min": tp.binning.z_min,
        "z_max": tp.binning.z_max,
        "d": tp.binning.d,
    }
    for name, plane in zip(("xy", "xz", "yz"), tp.planes(), strict=True):
        array = plane.detach().cpu().numpy().astype("<f4")
        (out_dir / f"plane_{name}.raw").write_bytes(np.ascontiguousarray(array).tobytes())
        manifest[f"shape_{name}"] = "x".join(str(s) for s in array.shape)
    write_key_values(out_dir / "manifest.txt", manifest)
