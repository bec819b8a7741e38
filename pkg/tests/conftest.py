"""Pytest configuration and fixtures for track3d tests."""

import os
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

# Add src to path
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

from track3d.config import Settings
from track3d.data.synthetic import RenderedSequence, generate_scene, render_sequence
from track3d.schemas.models import (
    BodySpec,
    CameraIntrinsics,
    ModelConfig,
    SceneSpec,
    SynthConfig,
    TrainConfig,
)
from track3d.services.synthesis_service import SynthesisService


@pytest.fixture(scope="session")
def test_settings() -> Settings:
    """Create test settings."""
    return Settings(app_name="track3d-test", debug=True, deterministic=True, num_threads=1)


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    """A model small enough to run a few windows on CPU in milliseconds."""
    return ModelConfig(
        pe_bands=4,
        backbone_channels=8,
        backbone_blocks=1,
        triplane_channels=16,
        completion_layers=1,
        depth_bins=16,
        corr_radius=1,
        model_width=32,
        num_heads=4,
        mlp_ratio=2,
        num_blocks=2,
        rigidity_dim=8,
        iterations=2,
        window=4,
    )


@pytest.fixture
def tiny_train_config(tiny_model_config: ModelConfig) -> TrainConfig:
    return TrainConfig(
        learning_rate=1e-3,
        warmup_steps=2,
        steps=3,
        num_queries=16,
        max_pairs=64,
        seed=0,
        checkpoint_interval=2,
        model=tiny_model_config,
    )


@pytest.fixture
def intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=40.0, fy=40.0, cx=16.0, cy=16.0, width=32, height=32)


@pytest.fixture
def two_body_spec(intrinsics: CameraIntrinsics) -> SceneSpec:
    """Two separated cuboids moving in opposite directions."""
    return SceneSpec(
        seed=3,
        bodies=[
            BodySpec(
                shape="cuboid",
                size=(0.4, 0.4, 0.4),
                center=(-0.8, 0.0, 4.0),
                velocity=(0.02, 0.0, 0.0),
                angular_velocity=(0.0, 0.05, 0.0),
                num_points=800,
            ),
            BodySpec(
                shape="sphere",
                size=(0.4, 0.4, 0.4),
                center=(0.8, 0.1, 4.5),
                velocity=(-0.02, 0.01, 0.0),
                num_points=800,
            ),
        ],
        intrinsics=intrinsics,
        num_frames=6,
    )


@pytest.fixture
def rendered_sequence(two_body_spec: SceneSpec) -> RenderedSequence:
    return render_sequence(generate_scene(two_body_spec))


@pytest.fixture(scope="session")
def small_synth_config() -> SynthConfig:
    return SynthConfig(
        seed=7,
        num_train=2,
        num_test=1,
        num_bodies=2,
        num_frames=6,
        width=32,
        height=32,
        points_per_body=800,
        tracks_per_sequence=48,
    )


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory: pytest.TempPathFactory, small_synth_config) -> Path:
    """A tiny dataset generated once per session; tests must not modify it."""
    root = tmp_path_factory.mktemp("dataset")
    SynthesisService(small_synth_config).generate(root, force=True)
    return root


@pytest.fixture(autouse=True)
def _seed_everything() -> None:
    torch.manual_seed(0)
    np.random.seed(0)


def pytest_configure(config):
    """Configure pytest markers."""
    config.addinivalue_line(
        "markers", "slow: training/acceptance runs, enabled with TRACK3D_RUN_SLOW=1"
    )


def pytest_collection_modifyitems(config, items):
    """Skip slow tests unless explicitly requested."""
    if not os.getenv("TRACK3D_RUN_SLOW"):
        skip_slow = pytest.mark.skip(reason="set TRACK3D_RUN_SLOW=1 to run slow tests")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip_slow)
