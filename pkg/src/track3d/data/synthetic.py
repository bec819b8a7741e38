"""Seeded synthetic RGBD sequences of moving rigid bodies with exact ground truth.

Bodies are point-sampled surfaces rendered with a per-pixel z-buffer; the
camera is static and bodies move with constant linear and angular velocity.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np
import torch
from scipy.spatial.transform import Rotation

from ..errors import DataError
from ..geometry.camera import DepthMap
from ..geometry.io import FrameBundle
from ..schemas.models import BodySpec, CameraIntrinsics, SceneSpec, SynthConfig
from ..utils.logger import get_logger

logger = get_logger(__name__)

BACKGROUND = (0.2, 0.2, 0.25)
MAX_SPEC_ATTEMPTS = 200


@dataclass
class RigidBody:
    body_id: int
    spec: BodySpec
    local_points: np.ndarray  # (P, 3) body frame
    colors: np.ndarray  # (P, 3) in [0, 1]

    def pose(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Rotation matrix and center at frame ``t``: ``R = exp(tω)``, ``c = c0 + tv``."""
        spin = np.asarray(self.spec.angular_velocity, dtype=np.float64)
        rotation = Rotation.from_rotvec(t * spin)
        center = np.asarray(self.spec.center, dtype=np.float64) + t * np.asarray(
            self.spec.velocity, dtype=np.float64
        )
        return rotation.as_matrix(), center

    def points_at(self, t: int) -> np.ndarray:
        rotation, center = self.pose(t)
        return self.local_points @ rotation.T + center


@dataclass
class Scene:
    spec: SceneSpec
    bodies: list[RigidBody]

    @property
    def num_points(self) -> int:
        return sum(len(b.local_points) for b in self.bodies)

    def points_at(self, t: int) -> np.ndarray:
        return np.concatenate([b.points_at(t) for b in self.bodies])

    def body_ids(self) -> np.ndarray:
        return np.concatenate(
            [np.full(len(b.local_points), b.body_id, dtype=np.int64) for b in self.bodies]
        )

    def colors(self) -> np.ndarray:
        return np.concatenate([b.colors for b in self.bodies])


@dataclass
class RenderedSequence:
    """Frames plus ground truth for every surface sample."""

    frames: list[FrameBundle]
    positions: np.ndarray  # (P, T, 3) meters
    uv: np.ndarray  # (P, T, 2) pixels
    visible: np.ndarray  # (P, T) bool
    body_ids: np.ndarray  # (P,)

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    def subset(self, indices: np.ndarray) -> "RenderedSequence":
        return RenderedSequence(
            frames=self.frames,
            positions=self.positions[indices],
            uv=self.uv[indices],
            visible=self.visible[indices],
            body_ids=self.body_ids[indices],
        )


def sample_surface(spec: BodySpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on a cuboid's faces or a sphere, in the body frame."""
    n = spec.num_points
    if spec.shape == "sphere":
        directions = rng.normal(size=(n, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        return directions * spec.size[0]

    half = np.asarray(spec.size, dtype=np.float64)
    # Face pairs normal to x, y, z weighted by area.
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    axes = rng.choice(3, size=n, p=areas / areas.sum())
    points = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    signs = rng.choice([-1.0, 1.0], size=n)
    points[np.arange(n), axes] = signs * half[axes]
    return points


def generate_scene(spec: SceneSpec) -> Scene:
    """Deterministic body geometry and per-point colors from ``spec.seed``.

    Raises:
        ValueError: If any two bodies' bounding spheres overlap at frame 0
    """
    for (i, a), (j, b) in combinations(enumerate(spec.bodies), 2):
        gap = np.linalg.norm(np.subtract(a.center, b.center))
        if gap < a.bounding_radius + b.bounding_radius:
            raise ValueError(f"Bodies {i} and {j} overlap initially (center distance {gap:.3f})")

    rng = np.random.default_rng(spec.seed)
    bodies = []
    for body_id, body_spec in enumerate(spec.bodies):
        local = sample_surface(body_spec, rng)
        base = rng.uniform(0.2, 1.0, size=3)
        texture = rng.uniform(0.0, 1.0, size=(body_spec.num_points, 3))
        colors = np.clip(0.6 * base + 0.4 * texture, 0.0, 1.0)
        bodies.append(RigidBody(body_id=body_id, spec=body_spec, local_points=local, colors=colors))
    return Scene(spec=spec, bodies=bodies)


def project_points(points: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    z = points[..., 2]
    u = K.fx * points[..., 0] / z + K.cx
    v = K.fy * points[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def rasterize(
    points: np.ndarray, colors: np.ndarray, K: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Z-buffer splat of colored points, one pixel per point.

    Returns:
        Tuple of (image H×W×3, depth H×W with 0 where empty, uv (P, 2),
        front-most depth at each point's pixel (P,), ``inf`` outside the image)
    """
    h, w = K.height, K.width
    uv = project_points(points, K)
    z = points[:, 2]
    cols = np.rint(uv[:, 0]).astype(np.int64)
    rows = np.rint(uv[:, 1]).astype(np.int64)
    inside = (z > 0) & (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)

    flat = np.where(inside, rows * w + cols, -1)
    zbuf = np.full(h * w, np.inf)
    image = np.tile(np.asarray(BACKGROUND, dtype=np.float64), (h * w, 1))
    idx = np.flatnonzero(inside)
    if idx.size:
        order = idx[np.lexsort((z[idx], flat[idx]))]
        pixels, first = np.unique(flat[order], return_index=True)
        front = order[first]
        zbuf[pixels] = z[front]
        image[pixels] = colors[front]

    front_depth = np.where(inside, zbuf[np.maximum(flat, 0)], np.inf)
    depth = np.where(np.isfinite(zbuf), zbuf, 0.0).reshape(h, w)
    return image.reshape(h, w, 3), depth, uv, front_depth


def render_sequence(scene: Scene) -> RenderedSequence:
    """Render every frame and the ground-truth tracks of all surface samples.

    A sample is visible when it projects inside the image and lies within half a
    visibility quantum of the z-buffer at its pixel.
    """
    spec = scene.spec
    K = spec.intrinsics
    colors = scene.colors()
    tolerance = 0.5 * spec.visibility_quantum

    frames: list[FrameBundle] = []
    positions, uvs, visibility = [], [], []
    for t in range(spec.num_frames):
        points = scene.points_at(t)
        image, depth, uv, front_depth = rasterize(points, colors, K)
        visible = np.isfinite(front_depth) & (points[:, 2] - front_depth <= tolerance)

        # Quantize to 8 bits so in-memory frames match their PNG files.
        image = np.round(image * 255.0) / 255.0
        frames.append(
            FrameBundle(
                image=torch.from_numpy(image.transpose(2, 0, 1).astype(np.float32)),
                depth=DepthMap.from_values(depth.astype(np.float32)),
                intrinsics=K,
            )
        )
        positions.append(points)
        uvs.append(uv)
        visibility.append(visible)

    return RenderedSequence(
        frames=frames,
        positions=np.stack(positions, axis=1),
        uv=np.stack(uvs, axis=1),
        visible=np.stack(visibility, axis=1),
        body_ids=scene.body_ids(),
    )


def sample_queries(visible: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Indices of ``n`` tracks visible at frame 0, uniform without replacement.

    Raises:
        DataError: If fewer than ``n`` tracks are visible at frame 0
    """
    candidates = np.flatnonzero(visible[:, 0])
    if candidates.size < n:
        raise DataError(f"Only {candidates.size} tracks visible at frame 0, {n} queries requested")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(candidates, size=n, replace=False))


def _stays_in_range(body: BodySpec, num_frames: int, z_min: float, z_max: float) -> bool:
    radius = body.bounding_radius
    for t in (0, num_frames - 1):
        z = body.center[2] + t * body.velocity[2]
        if z - radius < z_min or z + radius > z_max:
            return False
    return True


def random_scene_spec(config: SynthConfig, seed: int) -> SceneSpec:
    """Draw a non-overlapping scene whose bodies stay inside the depth range.

    Raises:
        DataError: If no valid arrangement is found
    """
    rng = np.random.default_rng(seed)
    K = CameraIntrinsics.from_image_size(config.width, config.height)
    z_min, z_max = 1.5, 8.0
    bodies: list[BodySpec] = []
    for _ in range(MAX_SPEC_ATTEMPTS):
        if len(bodies) == config.num_bodies:
            break
        shape = "cuboid" if rng.uniform() < 0.6 else "sphere"
        size = tuple(float(s) for s in rng.uniform(0.35, 0.7, size=3))
        z = float(rng.uniform(3.0, 6.0))
        half_w = 0.35 * z * config.width / K.fx
        half_h = 0.35 * z * config.height / K.fy
        center = (float(rng.uniform(-half_w, half_w)), float(rng.uniform(-half_h, half_h)), z)
        candidate = BodySpec(
            shape=shape,
            size=size,
            center=center,
            velocity=tuple(float(x) for x in rng.uniform(-config.max_speed, config.max_speed, 3)),
            angular_velocity=tuple(
                float(x) for x in rng.uniform(-config.max_spin, config.max_spin, 3)
            ),
            num_points=config.points_per_body,
        )
        if not _stays_in_range(candidate, config.num_frames, z_min, z_max):
            continue
        overlaps = any(
            np.linalg.norm(np.subtract(candidate.center, other.center))
            < candidate.bounding_radius + other.bounding_radius
            for other in bodies
        )
        if not overlaps:
            bodies.append(candidate)
    if len(bodies) < config.num_bodies:
        raise DataError(f"Could not place {config.num_bodies} bodies for seed {seed}")
    return SceneSpec(
        seed=seed,
        bodies=bodies,
        intrinsics=K,
        num_frames=config.num_frames,
        z_min=z_min,
        z_max=z_max,
    )
