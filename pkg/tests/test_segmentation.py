"""Tests for affinity construction and spectral rigid-part segmentation."""

import numpy as np
import pytest
from scipy.linalg import eigvalsh

from track3d.errors import DataError
from track3d.evaluation.metrics import clustering_accuracy
from track3d.services.segmentation_service import (
    SegmentationService,
    build_affinity,
    eigengap_count,
    load_embeddings,
    normalized_laplacian,
    read_labels,
    save_embeddings,
    spectral_segment,
    write_labels,
)


def block_affinity(sizes):
    n = sum(sizes)
    A = np.zeros((n, n))
    start = 0
    for size in sizes:
        A[start : start + size, start : start + size] = 1.0
        start += size
    return A


def planted_labels(sizes):
    return np.concatenate([np.full(size, k) for k, size in enumerate(sizes)])


class TestBuildAffinity:
    """Test cases for clamped cosine affinities."""

    def test_identical_embeddings(self):
        A = build_affinity(np.tile([0.3, -1.0, 2.0], (5, 1)))
        assert np.allclose(A, np.ones((5, 5)))

    def test_orthogonal_groups(self):
        emb = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [0.0, 0.5]])
        assert np.allclose(build_affinity(emb), block_affinity([2, 2]))

    def test_matches_pairwise_loop(self):
        emb = np.random.default_rng(0).normal(size=(7, 4))
        A = build_affinity(emb)
        for i in range(7):
            for j in range(7):
                if i == j:
                    expected = 1.0
                else:
                    cos = emb[i] @ emb[j] / (np.linalg.norm(emb[i]) * np.linalg.norm(emb[j]))
                    expected = min(max(cos, 0.0), 1.0)
                assert A[i, j] == pytest.approx(expected, abs=1e-12)
        assert np.array_equal(A, A.T)

    def test_needs_two_embeddings(self):
        with pytest.raises(ValueError):
            build_affinity(np.ones((1, 3)))


class TestSpectralSegment:
    """Test cases for normalized spectral clustering."""

    def test_laplacian_spectrum_in_range(self):
        A = build_affinity(np.random.default_rng(1).normal(size=(20, 6)))
        eigenvalues = eigvalsh(normalized_laplacian(A))
        assert eigenvalues.min() >= -1e-6
        assert eigenvalues.max() <= 2 + 1e-6

    def test_block_diagonal_has_zero_eigenvalues(self):
        eigenvalues = eigvalsh(normalized_laplacian(block_affinity([4, 5, 3])))
        assert np.all(np.abs(eigenvalues[:3]) < 1e-8)
        assert eigenvalues[3] > 0.5

    def test_two_blocks(self):
        labels = spectral_segment(block_affinity([6, 4]), k=2)
        assert labels.tolist() == [0] * 6 + [1] * 4

    def test_auto_count_from_eigengap(self):
        sizes = [5, 4, 6]
        labels = spectral_segment(block_affinity(sizes), k="auto")
        assert clustering_accuracy(labels, planted_labels(sizes)) == 1.0
        assert labels.max() == 2

    def test_single_cluster(self):
        labels = spectral_segment(block_affinity([3, 3]), k=1)
        assert set(labels.tolist()) == {0}

    def test_noisy_planted_partition(self):
        rng = np.random.default_rng(42)
        sizes = [32, 32]
        truth = planted_labels(sizes)
        same = truth[:, None] == truth[None, :]
        A = np.where(same, rng.uniform(0.85, 0.95, (64, 64)), rng.uniform(0.05, 0.15, (64, 64)))
        A = np.triu(A, 1)
        A = A + A.T + np.eye(64)
        labels = spectral_segment(A, k=2, seed=0)
        assert clustering_accuracy(labels, truth) >= 0.95

    def test_isolated_node_is_singleton(self):
        A = block_affinity([3, 1, 2])
        labels = spectral_segment(A, k="auto")
        assert labels[3] not in labels[:3] and labels[3] not in labels[4:]
        assert len(set(labels.tolist())) == 3

    def test_reordering_only_relabels(self):
        rng = np.random.default_rng(3)
        sizes = [5, 7, 4]
        A = block_affinity(sizes) * 0.9 + 0.05
        np.fill_diagonal(A, 1.0)
        perm = rng.permutation(len(A))
        labels = spectral_segment(A, k=3)
        permuted = spectral_segment(A[np.ix_(perm, perm)], k=3)
        assert clustering_accuracy(permuted, labels[perm]) == 1.0

    def test_labels_numbered_by_first_appearance(self):
        A = block_affinity([2, 3])[::-1, ::-1].copy()
        labels = spectral_segment(A, k=2)
        assert labels[0] == 0

    def test_eigengap_count(self):
        assert eigengap_count(np.array([0.0, 0.0, 0.9, 1.0, 1.1])) == 2
        assert eigengap_count(np.array([0.3])) == 1

    def test_rejects_invalid_input(self):
        with pytest.raises(ValueError):
            spectral_segment(np.array([[1.0, 0.2], [0.4, 1.0]]))
        with pytest.raises(ValueError):
            spectral_segment(block_affinity([2, 2]), k=0)
        with pytest.raises(ValueError):
            spectral_segment(np.ones((2, 3)))


class TestSegmentationService:
    """Test cases for the segmentation service and label files."""

    def test_segment_embeddings(self):
        emb = np.array([[1.0, 0.0, 0.0]] * 4 + [[0.0, 0.0, 1.0]] * 3)
        emb = emb + np.random.default_rng(0).normal(scale=0.01, size=emb.shape)
        labels = SegmentationService(seed=0).segment(emb, k=2)
        assert labels.tolist() == [0, 0, 0, 0, 1, 1, 1]

    def test_labels_round_trip(self, tmp_path):
        ids = np.array([11, 4, 7, 0])
        labels = np.array([2, 0, 1, 1])
        write_labels(tmp_path / "labels.txt", ids, labels)
        assert (tmp_path / "labels.txt").read_text().splitlines()[0] == "11 2"
        read_ids, read = read_labels(tmp_path / "labels.txt")
        assert read_ids.tolist() == [0, 4, 7, 11]
        assert read.tolist() == [1, 0, 1, 2]

    def test_labels_need_one_id_each(self, tmp_path):
        with pytest.raises(ValueError):
            write_labels(tmp_path / "labels.txt", np.array([1, 2]), np.array([0, 0, 1]))

    def test_malformed_labels_file(self, tmp_path):
        (tmp_path / "labels.txt").write_text("0 1\nnot a label\n")
        with pytest.raises(DataError):
            read_labels(tmp_path / "labels.txt")
        with pytest.raises(DataError):
            read_labels(tmp_path / "missing.txt")
        (tmp_path / "labels.txt").write_text("3 1\n3 0\n")
        with pytest.raises(DataError):
            read_labels(tmp_path / "labels.txt")


class TestEmbeddingsFile:
    """Test cases for id-keyed embedding storage."""

    def test_rows_follow_requested_ids(self, tmp_path):
        path = tmp_path / "embeddings.npz"
        emb = np.arange(6, dtype=np.float64).reshape(3, 2)
        save_embeddings(path, np.array([11, 4, 7]), emb)
        ids, stored = load_embeddings(path)
        assert ids.tolist() == [11, 4, 7]
        assert np.array_equal(stored, emb)
        ids, aligned = load_embeddings(path, ids=np.array([4, 7, 11]))
        assert ids.tolist() == [4, 7, 11]
        assert aligned.tolist() == [[2.0, 3.0], [4.0, 5.0], [0.0, 1.0]]

    def test_id_mismatch(self, tmp_path):
        path = tmp_path / "embeddings.npz"
        save_embeddings(path, np.array([1, 2]), np.ones((2, 3)))
        with pytest.raises(DataError):
            load_embeddings(path, ids=np.array([1, 3]))
        with pytest.raises(DataError):
            load_embeddings(path, ids=np.array([1]))

    def test_missing_or_foreign_file(self, tmp_path):
        with pytest.raises(DataError):
            load_embeddings(tmp_path / "none.npz")
        other = tmp_path / "other.npz"
        with other.open("wb") as f:
            np.savez(f, weights=np.ones(3))
        with pytest.raises(DataError):
            load_embeddings(other)
