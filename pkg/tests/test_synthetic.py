"""Tests for synthetic scene generation and the on-disk dataset layout."""

import json
from itertools import combinations

import numpy as np
import pytest

from track3d.data.dataset import (
    DATASET_FILE,
    SPEC_FILE,
    TRACKS_FILE,
    dataset_id,
    list_sequences,
    load_sequence,
    records_to_ground_truth,
    tracks_to_records,
)
from track3d.data.synthetic import (
    generate_scene,
    random_scene_spec,
    render_sequence,
    sample_queries,
)
from track3d.errors import DataError
from track3d.schemas.models import BodySpec, SceneSpec
from track3d.services.synthesis_service import SynthesisService


class TestSceneGeneration:
    """Test cases for seeded rigid-body scenes."""

    def test_same_seed_same_scene(self, two_body_spec):
        a = render_sequence(generate_scene(two_body_spec))
        b = render_sequence(generate_scene(two_body_spec))
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.visible, b.visible)
        for fa, fb in zip(a.frames, b.frames, strict=True):
            assert np.array_equal(fa.image.numpy(), fb.image.numpy())
            assert np.array_equal(fa.depth.values.numpy(), fb.depth.values.numpy())

    def test_body_ids(self, rendered_sequence):
        assert set(rendered_sequence.body_ids.tolist()) == {0, 1}
        assert rendered_sequence.positions.shape == (1600, 6, 3)

    def test_bodies_move_rigidly(self, rendered_sequence):
        rng = np.random.default_rng(0)
        for body in (0, 1):
            members = np.flatnonzero(rendered_sequence.body_ids == body)
            sample = rng.choice(members, size=30, replace=False)
            positions = rendered_sequence.positions[sample]
            for i, j in combinations(range(30), 2):
                distances = np.linalg.norm(positions[i] - positions[j], axis=-1)
                assert np.allclose(distances, distances[0], atol=1e-9)

    def test_visible_points_agree_with_depth(self, rendered_sequence, two_body_spec):
        tolerance = 0.5 * two_body_spec.visibility_quantum
        for t, frame in enumerate(rendered_sequence.frames):
            depth = frame.depth.values.numpy()
            visible = np.flatnonzero(rendered_sequence.visible[:, t])
            assert visible.size > 0
            uv = np.rint(rendered_sequence.uv[visible, t]).astype(int)
            z = rendered_sequence.positions[visible, t, 2]
            stored = depth[uv[:, 1], uv[:, 0]]
            assert np.all(np.abs(stored - z) <= tolerance + 1e-5)

    def test_background_has_no_depth(self, rendered_sequence):
        valid = rendered_sequence.frames[0].depth.valid_mask
        assert 0 < int(valid.sum()) < valid.numel()

    def test_overlapping_bodies_rejected(self, intrinsics):
        spec = SceneSpec(
            bodies=[BodySpec(center=(0.0, 0.0, 4.0)), BodySpec(center=(0.1, 0.0, 4.0))],
            intrinsics=intrinsics,
        )
        with pytest.raises(ValueError):
            generate_scene(spec)

    def test_random_spec_stays_in_depth_range(self, small_synth_config):
        spec = random_scene_spec(small_synth_config, seed=11)
        assert len(spec.bodies) == small_synth_config.num_bodies
        for body in spec.bodies:
            for t in (0, spec.num_frames - 1):
                z = body.center[2] + t * body.velocity[2]
                assert spec.z_min <= z - body.bounding_radius
                assert z + body.bounding_radius <= spec.z_max


class TestSampleQueries:
    """Test cases for query selection."""

    def test_visible_at_first_frame(self):
        visible = np.zeros((10, 3), dtype=bool)
        visible[[1, 4, 5, 8], 0] = True
        picked = sample_queries(visible, 3, seed=0)
        assert len(picked) == 3
        assert set(picked.tolist()) <= {1, 4, 5, 8}
        assert np.array_equal(picked, np.sort(picked))
        assert np.array_equal(picked, sample_queries(visible, 3, seed=0))

    def test_too_few_visible(self):
        with pytest.raises(DataError):
            sample_queries(np.zeros((4, 2), dtype=bool), 1, seed=0)


class TestTrackRecords:
    """Test cases for grouping track records."""

    def test_records_group_by_id(self):
        positions = np.arange(12, dtype=float).reshape(2, 2, 3)
        uv = np.zeros((2, 2, 2))
        visible = np.array([[True, False], [True, True]])
        records = tracks_to_records(np.array([7, 3]), positions, uv, visible, np.array([1, 0]))
        assert len(records) == 4
        gt = records_to_ground_truth(records)
        assert gt.ids.tolist() == [3, 7]
        assert np.array_equal(gt.positions[1], positions[0])
        assert gt.body_ids.tolist() == [0, 1]
        assert gt.visible.tolist() == [[True, True], [True, False]]

    def test_duplicate_frame(self):
        record = {"id": 0, "frame": 0, "x3d": 0, "y3d": 0, "z3d": 1, "u": 0, "v": 0,
                  "visible": True}
        with pytest.raises(DataError):
            records_to_ground_truth([record, dict(record)])

    def test_missing_frame(self):
        base = {"x3d": 0, "y3d": 0, "z3d": 1, "u": 0, "v": 0, "visible": True}
        records = [
            {"id": 0, "frame": 0, **base},
            {"id": 0, "frame": 1, **base},
            {"id": 1, "frame": 1, **base},
        ]
        with pytest.raises(DataError, match="Track 1"):
            records_to_ground_truth(records)

    def test_malformed_record(self):
        with pytest.raises(DataError):
            records_to_ground_truth([{"id": 0, "frame": 0}])


class TestSynthesisService:
    """Test cases for dataset generation."""

    def test_layout(self, synthetic_dataset, small_synth_config):
        assert (synthetic_dataset / DATASET_FILE).is_file()
        train = list_sequences(synthetic_dataset, "train")
        test = list_sequences(synthetic_dataset, "test")
        assert [p.name for p in train] == ["seq_00000", "seq_00001"]
        assert len(test) == 1
        for seq in train + test:
            assert (seq / TRACKS_FILE).is_file()
            assert (seq / SPEC_FILE).is_file()
            assert len(list((seq / "frames").glob("*.png"))) == small_synth_config.num_frames

    def test_load_sequence(self, synthetic_dataset, small_synth_config):
        seq = load_sequence(list_sequences(synthetic_dataset, "train")[0])
        assert len(seq.frames) == small_synth_config.num_frames
        assert seq.ground_truth.num_frames == small_synth_config.num_frames
        assert seq.ground_truth.num_tracks <= small_synth_config.tracks_per_sequence
        assert seq.ground_truth.visible[:, 0].all()
        assert seq.ground_truth.body_ids is not None
        assert seq.spec is not None

        rendered = render_sequence(generate_scene(seq.spec))
        for loaded, original in zip(seq.frames, rendered.frames, strict=True):
            assert np.array_equal(loaded.depth.values.numpy(), original.depth.values.numpy())
            assert np.allclose(loaded.image.numpy(), original.image.numpy(), atol=1e-6)

    def test_regeneration_is_identical(self, tmp_path, small_synth_config, synthetic_dataset):
        manifest = SynthesisService(small_synth_config).generate(tmp_path / "again")
        original = json.loads((synthetic_dataset / DATASET_FILE).read_text())
        assert manifest["sequences"] == original["sequences"]
        for split, name in (("train", "seq_00001"), ("test", "seq_00000")):
            a = (tmp_path / "again" / split / name / TRACKS_FILE).read_text()
            b = (synthetic_dataset / split / name / TRACKS_FILE).read_text()
            assert a == b
        assert dataset_id(tmp_path / "again") == dataset_id(synthetic_dataset)

    def test_sequence_seeds_differ_across_splits(self, small_synth_config):
        service = SynthesisService(small_synth_config)
        seeds = {service.sequence_seed(s, i) for s in ("train", "test") for i in range(3)}
        assert len(seeds) == 6

    def test_refuses_non_empty_output(self, tmp_path, small_synth_config):
        (tmp_path / "keep.txt").write_text("x")
        with pytest.raises(DataError):
            SynthesisService(small_synth_config).generate(tmp_path)

    def test_missing_split(self, tmp_path):
        with pytest.raises(DataError):
            list_sequences(tmp_path, "train")
