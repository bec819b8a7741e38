"""Track overlays drawn on video frames with Pillow."""

import colorsys
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from ..geometry.io import frame_name

OCCLUDED_COLOR = (128, 128, 128)


def palette(count: int) -> list[tuple[int, int, int]]:
    """``count`` well-separated RGB colors (golden-ratio hue steps)."""
    colors = []
    for i in range(count):
        r, g, b = colorsys.hsv_to_rgb((i * 0.618033988749895) % 1.0, 0.85, 0.95)
        colors.append((int(r * 255), int(g * 255), int(b * 255)))
    return colors


def track_colors(num_tracks: int, labels: np.ndarray | None = None) -> list[tuple[int, int, int]]:
    """One color per track, or one per label when rigid-part labels are given."""
    if labels is None:
        return palette(num_tracks)
    colors = palette(int(labels.max()) + 1)
    return [colors[int(label)] for label in labels]


def to_pil(image: torch.Tensor) -> Image.Image:
    array = (image.detach().cpu().clamp(0, 1).permute(1, 2, 0).numpy() * 255.0).round()
    return Image.fromarray(array.astype(np.uint8))


def draw_tracks(
    image: torch.Tensor,
    uv: np.ndarray,
    visible: np.ndarray,
    frame: int,
    colors: list[tuple[int, int, int]],
    history: int = 5,
    scale: int = 4,
) -> Image.Image:
    """Frame ``frame`` upscaled by ``scale`` with each track's recent trail.

    Visible points are filled dots, occluded ones hollow gray circles.
    """
    canvas = to_pil(image)
    canvas = canvas.resize((canvas.width * scale, canvas.height * scale), Image.Resampling.NEAREST)
    draw = ImageDraw.Draw(canvas)
    start = max(0, frame - history)
    radius = max(1, scale // 2)
    for q, color in enumerate(colors):
        trail = [(float(u) * scale, float(v) * scale) for u, v in uv[q, start : frame + 1]]
        if len(trail) > 1:
            draw.line(trail, fill=color, width=1)
        x, y = trail[-1]
        box = (x - radius, y - radius, x + radius, y + radius)
        if visible[q, frame]:
            draw.ellipse(box, fill=color)
        else:
            draw.ellipse(box, outline=OCCLUDED_COLOR)
    return canvas


def save_overlays(
    images: list[torch.Tensor],
    uv: np.ndarray,
    visible: np.ndarray,
    out_dir: str | Path,
    labels: np.ndarray | None = None,
    history: int = 5,
) -> int:
    """Write one PNG overlay per frame; returns the number written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    colors = track_colors(uv.shape[0], labels)
    for t, image in enumerate(images):
        draw_tracks(image, uv, visible, t, colors, history).save(out_dir / f"{frame_name(t)}.png")
    return len(images)
