"""Tests for camera geometry, depth binning and the on-disk frame formats."""

import numpy as np
import pytest
import torch

from track3d.errors import DataError
from track3d.geometry.camera import (
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
from track3d.geometry.io import (
    DEPTH_DIR,
    FRAME_DIR,
    INTRINSICS_FILE,
    load_frames,
    read_depth,
    read_intrinsics,
    write_depth,
    write_image,
    write_intrinsics,
)
from track3d.schemas.models import CameraIntrinsics, DepthBinning

K100 = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


class TestProjection:
    """Test cases for pixel/3D lifting."""

    def test_principal_point_lies_on_optical_axis(self):
        """The principal-point ray is the optical axis."""
        point = unproject_with_depth(torch.tensor([[50.0, 50.0]]), torch.tensor([2.0]), K100)
        assert torch.allclose(point, torch.tensor([[0.0, 0.0, 2.0]]))

    def test_unit_offset_ray(self):
        point = unproject_with_depth(torch.tensor([[150.0, 50.0]]), torch.tensor([1.0]), K100)
        assert torch.allclose(point, torch.tensor([[1.0, 0.0, 1.0]]))

    def test_project_direct_formula(self):
        uv, valid = project(torch.tensor([[1.0, 0.0, 1.0], [0.0, 0.0, 5.0]]), K100)
        assert torch.allclose(uv, torch.tensor([[150.0, 50.0], [50.0, 50.0]]))
        assert valid.all()

    def test_project_flags_points_behind_camera(self):
        uv, valid = project(torch.tensor([[0.0, 0.0, -1.0], [0.0, 0.0, 0.0]]), K100)
        assert not valid.any()
        assert torch.isfinite(uv).all()

    def test_round_trip_random_pixels(self):
        """project(unproject(p)) returns p on in-bounds pixels with valid depth."""
        gen = torch.Generator().manual_seed(0)
        depth = DepthMap.from_values(1.0 + 4.0 * torch.rand(100, 100, generator=gen).double())
        pixels = torch.rand(1000, 2, generator=gen, dtype=torch.float64) * 99.0
        points, valid = unproject(pixels, depth, K100)
        assert valid.all()
        uv, _ = project(points, K100)
        assert torch.allclose(uv, pixels, atol=1e-6)

    def test_invalid_depth_is_flagged(self):
        values = torch.full((10, 10), 2.0)
        values[:, :5] = 0.0
        depth = DepthMap.from_values(values)
        K = CameraIntrinsics.from_image_size(10, 10)
        points, valid = unproject(torch.tensor([[1.0, 1.0], [8.0, 8.0], [20.0, 1.0]]), depth, K)
        assert valid.tolist() == [False, True, False]
        assert torch.equal(points[0], torch.zeros(3))

    def test_lookup_depth_ignores_invalid_neighbours(self):
        values = torch.tensor([[2.0, 0.0], [2.0, float("nan")]])
        z, valid = lookup_depth(DepthMap.from_values(values), torch.tensor([[0.5, 0.5]]))
        assert valid.item()
        assert z.item() == pytest.approx(2.0)

    def test_border_pixels_cover_half_a_pixel(self):
        depth = DepthMap.from_values(torch.full((4, 4), 2.0))
        z, valid = lookup_depth(depth, torch.tensor([[3.4, 1.0], [-0.4, 0.0], [3.6, 1.0]]))
        assert valid.tolist() == [True, True, False]
        assert z[:2].tolist() == [2.0, 2.0]

    def test_empty_pixel_set(self):
        depth = DepthMap.from_values(torch.ones(4, 4))
        points, valid = unproject(torch.zeros(0, 2), depth, K100)
        assert points.shape == (0, 3) and valid.shape == (0,)

    def test_pixel_grid_is_row_major(self):
        grid = pixel_grid(2, 3)
        assert grid.tolist() == [[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]]

    def test_intrinsics_reject_principal_point_outside_image(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=10.0, fy=10.0, cx=20.0, cy=5.0, width=10, height=10)

    def test_fallback_intrinsics_use_width_as_focal_length(self):
        K = CameraIntrinsics.from_image_size(64, 48)
        assert (K.fx, K.fy, K.cx, K.cy) == (64.0, 64.0, 32.0, 24.0)


class TestPositionalEncoding:
    """Test cases for gamma_encode."""

    def test_origin_encoding(self):
        encoded = gamma_encode(torch.zeros(3), bands=10)
        assert encoded.shape == (60,)
        assert torch.equal(encoded[:30], torch.zeros(30))
        assert torch.equal(encoded[30:], torch.ones(30))

    def test_deterministic(self):
        p = torch.randn(5, 3)
        assert torch.equal(gamma_encode(p, 4), gamma_encode(p, 4))

    def test_jacobian_matches_finite_differences(self):
        p = torch.randn(2, 3, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(lambda x: gamma_encode(x, bands=3, scale=2.0), (p,))


class TestDepthBinning:
    """Test cases for depth quantization."""

    binning = DepthBinning(z_min=1.0, z_max=9.0, d=256)

    def test_endpoints_and_midpoint(self):
        assert depth_to_bin(1.0, self.binning) == 0.0
        assert depth_to_bin(9.0, self.binning) == 255.0
        assert depth_to_bin(5.0, self.binning) == pytest.approx(127.5)

    def test_clamping(self):
        z = torch.tensor([0.0, 100.0])
        assert depth_to_bin(z, self.binning).tolist() == [0.0, 255.0]

    def test_inverse(self):
        b = torch.tensor([0.0, 17.25, 255.0], dtype=torch.float64)
        assert torch.allclose(depth_to_bin(bin_to_depth(b, self.binning), self.binning), b)

    def test_rejects_unordered_bounds(self):
        with pytest.raises(ValueError):
            DepthBinning(z_min=2.0, z_max=2.0)

    def test_robust_binning_uses_percentiles(self):
        values = torch.linspace(1.0, 5.0, 101).reshape(1, 101)
        binning = robust_binning([DepthMap.from_values(values)], d=32)
        assert binning.z_min == pytest.approx(1.04)
        assert binning.z_max == pytest.approx(4.96)
        assert binning.d == 32

    def test_robust_binning_needs_valid_depth(self):
        with pytest.raises(ValueError):
            robust_binning([DepthMap.from_values(torch.zeros(3, 3))])

    def test_robust_binning_widens_constant_depth(self):
        binning = robust_binning([DepthMap.from_values(torch.full((4, 4), 3.0))])
        assert binning.z_min < 3.0 < binning.z_max


class TestFrameFiles:
    """Test cases for depth, intrinsics and frame directory IO."""

    def test_depth_round_trip(self, tmp_path):
        values = np.random.default_rng(0).uniform(1, 5, size=(6, 7)).astype(np.float32)
        write_depth(tmp_path / "d.raw", values)
        depth = read_depth(tmp_path / "d.raw")
        assert np.array_equal(depth.values.numpy(), values)
        assert (tmp_path / "d.meta").exists()

    def test_depth_size_mismatch(self, tmp_path):
        write_depth(tmp_path / "d.raw", np.ones((4, 4), dtype=np.float32))
        (tmp_path / "d.raw").write_bytes(b"\x00" * 12)
        with pytest.raises(DataError):
            read_depth(tmp_path / "d.raw")

    def test_intrinsics_round_trip(self, tmp_path):
        write_intrinsics(tmp_path / "K.txt", K100)
        assert read_intrinsics(tmp_path / "K.txt") == K100

    def test_intrinsics_missing_field(self, tmp_path):
        (tmp_path / "K.txt").write_text("fx=1\nfy=1\n")
        with pytest.raises(DataError):
            read_intrinsics(tmp_path / "K.txt")

    def _write_video(self, root, frames=3, with_intrinsics=True):
        for t in range(frames):
            write_image(root / FRAME_DIR / f"{t:05d}.png", np.full((8, 10, 3), 40 * t))
            write_depth(root / DEPTH_DIR / f"{t:05d}.raw", np.full((8, 10), 2.0, np.float32))
        if with_intrinsics:
            write_intrinsics(root / INTRINSICS_FILE, CameraIntrinsics.from_image_size(10, 8))

    def test_load_frames(self, tmp_path):
        self._write_video(tmp_path)
        frames = load_frames(tmp_path)
        assert len(frames) == 3
        assert frames[0].image.shape == (3, 8, 10)
        assert frames[2].image[0, 0, 0].item() == pytest.approx(80 / 255)

    def test_missing_depth_names_frame(self, tmp_path):
        self._write_video(tmp_path)
        (tmp_path / DEPTH_DIR / "00001.raw").unlink()
        with pytest.raises(DataError, match="00001"):
            load_frames(tmp_path)

    def test_intrinsics_fallback(self, tmp_path):
        self._write_video(tmp_path, with_intrinsics=False)
        frames = load_frames(tmp_path)
        assert frames[0].intrinsics.fx == 10.0

    def test_alternative_depth_dir(self, tmp_path):
        self._write_video(tmp_path)
        other = tmp_path / "estimated"
        for t in range(3):
            write_depth(other / f"{t:05d}.raw", np.full((8, 10), 7.0, np.float32))
        frames = load_frames(tmp_path, depth_dir=other)
        assert frames[0].depth.values[0, 0].item() == 7.0

    def test_no_frames(self, tmp_path):
        with pytest.raises(DataError):
            load_frames(tmp_path)
