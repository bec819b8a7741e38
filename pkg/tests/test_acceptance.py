"""Scaled-down learning runs: overfitting, held-out accuracy, ablation, segmentation, determinism.

These train real models on CPU and take hours; they run only with TRACK3D_RUN_SLOW=1.
"""

import pytest
import yaml

from track3d.cli import main
from track3d.data.dataset import TRACKS_FILE, list_sequences
from track3d.evaluation.report import REPORT_JSONL
from track3d.schemas.models import LossWeights, ModelConfig, SynthConfig, TrainConfig
from track3d.services.synthesis_service import SynthesisService
from track3d.services.training_service import METRICS_FILE, TrainingService

ACCEPTANCE_MODEL = ModelConfig(
    pe_bands=6,
    backbone_channels=32,
    backbone_blocks=2,
    triplane_channels=32,
    completion_layers=2,
    depth_bins=64,
    corr_radius=2,
    model_width=128,
    num_heads=4,
    mlp_ratio=4,
    num_blocks=3,
    rigidity_dim=32,
    iterations=4,
    window=8,
)


def acceptance_train_config(**updates) -> TrainConfig:
    """20 sequences, 64 queries, at most 5000 steps."""
    config = TrainConfig(
        learning_rate=3e-4,
        warmup_steps=200,
        steps=5000,
        num_queries=64,
        max_pairs=512,
        seed=0,
        checkpoint_interval=1000,
        propagated_window_prob=0.25,
        model=ACCEPTANCE_MODEL,
    )
    return config.model_copy(update=updates)


@pytest.fixture(scope="module")
def acceptance_dataset(tmp_path_factory):
    """20 training and 5 held-out 24-frame 64×64 scenes of two rigid bodies."""
    root = tmp_path_factory.mktemp("acceptance_data")
    config = SynthConfig(
        seed=11,
        num_train=20,
        num_test=5,
        num_bodies=2,
        num_frames=24,
        width=64,
        height=64,
        tracks_per_sequence=256,
    )
    SynthesisService(config).generate(root, force=True)
    return root


@pytest.fixture(scope="module")
def full_run(acceptance_dataset, tmp_path_factory, test_settings):
    """One training run with the ARAP term, shared by the checks that only read it."""
    out = tmp_path_factory.mktemp("full_run")
    service = TrainingService(acceptance_train_config(), acceptance_dataset, out, test_settings)
    return service, service.train()


@pytest.mark.slow
class TestOverfit:
    """Test cases for fitting the training split."""

    def test_training_split_is_fit(self, full_run):
        service, checkpoint = full_run
        _, summary = service.evaluate(checkpoint, split="train", num_queries=64)
        assert summary["delta_avg_2d"] > 0.9
        assert summary["oa"] > 0.9
        assert summary["survival"] > 0.95


@pytest.mark.slow
class TestGeneralization:
    """Test cases for held-out sequences from the same generator."""

    def test_beats_frozen_queries_on_every_sequence(self, full_run):
        service, checkpoint = full_run
        model_metrics, summary = service.evaluate(checkpoint, split="test", num_queries=64)
        frozen_metrics, _ = service.evaluate(None, split="test", predictor="frozen", num_queries=64)
        assert summary["delta_avg_2d"] > 0.7
        for name, metrics in model_metrics.items():
            assert metrics["delta_avg_2d"] > frozen_metrics[name]["delta_avg_2d"], name

    def test_rigid_parts_are_recovered(self, full_run):
        service, checkpoint = full_run
        _, summary = service.evaluate(checkpoint, split="test", num_queries=64)
        assert summary["clustering_accuracy"] >= 0.9


@pytest.mark.slow
class TestArapAblation:
    """Test cases for the direction of the ARAP ablation."""

    def test_arap_does_not_hurt(self, full_run, acceptance_dataset, tmp_path, test_settings):
        service, checkpoint = full_run
        _, with_arap = service.evaluate(checkpoint, split="test", num_queries=64)

        config = acceptance_train_config(loss_weights=LossWeights(beta=0.0))
        assert config.ablation == "w/o ARAP"
        ablated = TrainingService(config, acceptance_dataset, tmp_path, test_settings)
        _, without_arap = ablated.evaluate(ablated.train(), split="test", num_queries=64)
        assert with_arap["delta_avg_2d"] >= without_arap["delta_avg_2d"]


def run_pipeline(root, config_path):
    """synth, train, track and eval through the command line into ``root``."""
    data, run, tracked, report = (root / name for name in ("data", "run", "tracked", "report"))
    assert main(["synth", "--config", str(config_path), "--out", str(data)]) == 0
    assert main([
        "train", "--config", str(config_path), "--dataset", str(data), "--out", str(run),
    ]) == 0
    checkpoint = run / "checkpoints" / "checkpoint_000099"
    video = list_sequences(data, "test")[0]
    assert main([
        "track", "--checkpoint", str(checkpoint), "--video", str(video), "--grid", "8x8",
        "--segment", "--k", "2", "--out", str(tracked),
    ]) == 0
    assert main([
        "eval", "--config", str(config_path), "--dataset", str(data),
        "--checkpoint", str(checkpoint), "--out", str(report),
    ]) == 0
    return {
        "dataset": (video / TRACKS_FILE).read_bytes(),
        "metrics": (run / METRICS_FILE).read_bytes(),
        "tracks": (tracked / TRACKS_FILE).read_bytes(),
        "report": (report / REPORT_JSONL).read_bytes(),
    }


@pytest.mark.slow
class TestDeterminism:
    """Test cases for reproducing a whole pipeline from its seed."""

    def test_two_runs_are_byte_identical(self, tmp_path):
        config_path = tmp_path / "run.yaml"
        train = TrainConfig(
            steps=100,
            learning_rate=1e-3,
            warmup_steps=10,
            num_queries=32,
            max_pairs=256,
            checkpoint_interval=50,
            seed=4,
            model=ModelConfig(
                pe_bands=4,
                backbone_channels=8,
                backbone_blocks=1,
                triplane_channels=16,
                completion_layers=1,
                depth_bins=32,
                corr_radius=1,
                model_width=32,
                num_heads=4,
                mlp_ratio=2,
                num_blocks=2,
                rigidity_dim=8,
                iterations=2,
                window=4,
            ),
        )
        synth = SynthConfig(
            seed=4, num_train=3, num_test=1, num_frames=8, width=32, height=32,
            points_per_body=800, tracks_per_sequence=48,
        )
        config_path.write_text(
            yaml.safe_dump({"synth": synth.model_dump(mode="json"),
                            "train": train.model_dump(mode="json")})
        )

        first = run_pipeline(tmp_path / "a", config_path)
        second = run_pipeline(tmp_path / "b", config_path)
        for name, content in first.items():
            assert content == second[name], name
