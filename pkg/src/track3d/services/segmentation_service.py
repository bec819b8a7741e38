"""Rigid-part segmentation of tracks by spectral clustering of rigidity embeddings."""

from pathlib import Path

import numpy as np
import torch
from scipy.linalg import eigh
from sklearn.cluster import KMeans

from ..errors import DataError
from ..utils.files import atomic_write_text
from ..utils.logger import get_logger

logger = get_logger(__name__)

MAX_AUTO_CLUSTERS = 8
EPS = 1e-12


def build_affinity(embeddings: np.ndarray | torch.Tensor) -> np.ndarray:
    """Clamped cosine affinity ``A[i, j] = clamp(cos(E_i, E_j), 0, 1)`` with unit diagonal.

    Raises:
        ValueError: If fewer than two embeddings are given
    """
    if isinstance(embeddings, torch.Tensor):
        embeddings = embeddings.detach().cpu().numpy()
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise ValueError(f"Need at least 2 embeddings, got shape {emb.shape}")
    unit = emb / np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), EPS)
    affinity = np.clip(unit @ unit.T, 0.0, 1.0)
    affinity = 0.5 * (affinity + affinity.T)
    np.fill_diagonal(affinity, 1.0)
    return affinity


def normalized_laplacian(affinity: np.ndarray) -> np.ndarray:
    """``L_sym = I − D^{-1/2} A D^{-1/2}`` with degrees taken from the full matrix."""
    degree = affinity.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(degree, EPS))
    return np.eye(len(affinity)) - inv_sqrt[:, None] * affinity * inv_sqrt[None, :]


def eigengap_count(eigenvalues: np.ndarray, max_clusters: int = MAX_AUTO_CLUSTERS) -> int:
    """Cluster count at the largest gap among the first ``max_clusters`` eigenvalues."""
    head = np.sort(eigenvalues)[:max_clusters]
    if head.size < 2:
        return 1
    return int(np.argmax(np.diff(head))) + 1


def relabel_by_first_appearance(labels: np.ndarray) -> np.ndarray:
    mapping: dict[int, int] = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, label in enumerate(labels.tolist()):
        out[i] = mapping.setdefault(label, len(mapping))
    return out


def spectral_segment(affinity: np.ndarray, k: int | str = "auto", seed: int = 0) -> np.ndarray:
    """Normalized spectral clustering of an affinity matrix.

    Nodes with no off-diagonal affinity form singleton clusters; the rest are
    embedded with the ``k`` smallest eigenvectors of ``L_sym``, row-normalized
    and clustered with k-means (10 restarts, fixed seed). Labels are numbered
    by first appearance.

    Args:
        affinity: Symmetric N×N matrix with entries in ``[0, 1]``
        k: Cluster count or ``"auto"`` for the eigengap heuristic
        seed: k-means seed

    Returns:
        ``(N,)`` integer labels
    """
    A = np.asarray(affinity, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"Affinity must be square, got shape {A.shape}")
    if not np.allclose(A, A.T, atol=1e-9):
        raise ValueError("Affinity matrix must be symmetric")
    if k != "auto" and (not isinstance(k, int) or k < 1):
        raise ValueError(f"Cluster count must be a positive integer or 'auto', got {k!r}")

    n = A.shape[0]
    off_diagonal = A - np.diag(np.diag(A))
    isolated = off_diagonal.sum(axis=1) <= 0
    connected = np.flatnonzero(~isolated)
    labels = np.full(n, -1, dtype=np.int64)

    num_clusters = 0
    if connected.size:
        sub = A[np.ix_(connected, connected)].copy()
        np.fill_diagonal(sub, 1.0)
        eigenvalues, eigenvectors = eigh(normalized_laplacian(sub))
        if k == "auto":
            num_clusters = eigengap_count(eigenvalues)
        else:
            num_clusters = max(1, int(k) - int(isolated.sum()))
        num_clusters = min(num_clusters, connected.size)

        if num_clusters == 1:
            labels[connected] = 0
        else:
            features = eigenvectors[:, :num_clusters]
            features = features / np.maximum(np.linalg.norm(features, axis=1, keepdims=True), EPS)
            kmeans = KMeans(n_clusters=num_clusters, n_init=10, random_state=seed)
            labels[connected] = kmeans.fit_predict(features)

    for offset, index in enumerate(np.flatnonzero(isolated)):
        labels[index] = num_clusters + offset
    return relabel_by_first_appearance(labels)


def write_labels(path: str | Path, ids: np.ndarray, labels: np.ndarray) -> None:
    """Write one ``id label`` line per track, ``ids`` being the track ids.

    Raises:
        ValueError: If ``ids`` and ``labels`` differ in length
    """
    ids, labels = np.asarray(ids), np.asarray(labels)
    if ids.shape != labels.shape:
        raise ValueError(f"{len(ids)} ids for {len(labels)} labels")
    atomic_write_text(
        path, "".join(f"{int(i)} {int(label)}\n" for i, label in zip(ids, labels, strict=True))
    )


def read_labels(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a labels file written by :func:`write_labels`.

    Returns:
        Tuple of (ids (N,), labels (N,)) sorted by id

    Raises:
        DataError: If the file is missing, malformed or repeats an id
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Labels file not found: {path}")
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            point_id, label = (int(x) for x in line.split())
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: expected 'id label'") from e
        pairs.append((point_id, label))
    pairs.sort()
    ids = np.asarray([i for i, _ in pairs], dtype=np.int64)
    if len(np.unique(ids)) != len(ids):
        raise DataError(f"Duplicate track ids in {path}")
    return ids, np.asarray([label for _, label in pairs], dtype=np.int64)


def save_embeddings(path: str | Path, ids: np.ndarray, embeddings: np.ndarray) -> None:
    """Store per-track embeddings together with their track ids (``.npz``)."""
    ids, embeddings = np.asarray(ids, dtype=np.int64), np.asarray(embeddings)
    if embeddings.ndim != 2 or embeddings.shape[0] != ids.shape[0]:
        raise ValueError(f"Embeddings of shape {embeddings.shape} for {len(ids)} ids")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        np.savez(f, ids=ids, embeddings=embeddings)


def load_embeddings(
    path: str | Path, ids: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Load embeddings saved by :func:`save_embeddings`.

    Args:
        path: ``.npz`` file
        ids: When given, rows are reordered to follow these track ids

    Returns:
        Tuple of (ids (N,), embeddings (N, R))

    Raises:
        DataError: If the file is missing or malformed, or ``ids`` do not match
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Embeddings file not found: {path}")
    try:
        with np.load(path) as archive:
            stored_ids = np.asarray(archive["ids"], dtype=np.int64)
            embeddings = np.asarray(archive["embeddings"], dtype=np.float64)
    except (KeyError, ValueError, OSError) as e:
        raise DataError(f"Cannot read embeddings from {path}: {e}") from e
    if embeddings.ndim != 2 or embeddings.shape[0] != stored_ids.shape[0]:
        raise DataError(f"Embeddings of shape {embeddings.shape} for {len(stored_ids)} ids")
    if ids is None:
        return stored_ids, embeddings

    index = {int(track_id): row for row, track_id in enumerate(stored_ids)}
    if len(index) != len(stored_ids):
        raise DataError(f"Duplicate track ids in {path}")
    wanted = [int(i) for i in np.asarray(ids)]
    missing = [i for i in wanted if i not in index]
    if missing or len(wanted) != len(index):
        raise DataError(
            f"Embedding ids do not match the tracks ({len(index)} stored, "
            f"{len(wanted)} tracks, missing {missing[:20]})"
        )
    return np.asarray(wanted, dtype=np.int64), embeddings[[index[i] for i in wanted]]


class SegmentationService:
    """Clusters track embeddings into rigid parts."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def segment(self, embeddings: np.ndarray | torch.Tensor, k: int | str = "auto") -> np.ndarray:
        """Labels for each track.

        Raises:
            ValueError: If fewer than two embeddings are given or ``k`` is invalid
        """
        try:
            affinity = build_affinity(embeddings)
            labels = spectral_segment(affinity, k=k, seed=self.seed)
            parts = int(labels.max()) + 1
            logger.info(f"Segmented {len(labels)} tracks into {parts} rigid parts (k={k})")
            return labels
        except Exception as e:
            logger.error(f"Segmentation failed: {e}")
            raise
