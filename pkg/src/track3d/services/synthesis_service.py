"""Synthetic dataset generation service."""

from pathlib import Path
from typing import Any

import numpy as np

from ..data.dataset import SPLITS, write_dataset_manifest, write_sequence
from ..data.synthetic import (
    RenderedSequence,
    generate_scene,
    random_scene_spec,
    render_sequence,
    sample_queries,
)
from ..schemas.models import SceneSpec, SynthConfig
from ..utils.files import ensure_output_dir
from ..utils.logger import get_logger

logger = get_logger(__name__)


class SynthesisService:
    """Writes seeded train/test splits of synthetic RGBD sequences."""

    def __init__(self, config: SynthConfig):
        self.config = config

    def sequence_seed(self, split: str, index: int) -> int:
        """Seed of one sequence, derived from the dataset seed, split and index."""
        split_code = SPLITS.index(split)
        state = np.random.SeedSequence([self.config.seed, split_code, index]).generate_state(1)
        return int(state[0])

    def build_sequence(self, seed: int) -> tuple[SceneSpec, RenderedSequence, np.ndarray]:
        """Scene spec, rendering and the stored track subset for one seed.

        Stored tracks are drawn from surface samples visible at frame 0.
        """
        spec = random_scene_spec(self.config, seed)
        rendered = render_sequence(generate_scene(spec))
        available = int(rendered.visible[:, 0].sum())
        count = min(self.config.tracks_per_sequence, available)
        track_indices = sample_queries(rendered.visible, count, seed)
        return spec, rendered, track_indices

    def generate(self, out_dir: str | Path, force: bool = False) -> dict[str, Any]:
        """Generate every split under ``out_dir``.

        Returns:
            Dataset manifest (config and per-split sequence seeds)

        Raises:
            DataError: If ``out_dir`` is non-empty and ``force`` is not set
        """
        try:
            root = ensure_output_dir(out_dir, force=force)
            counts = {"train": self.config.num_train, "test": self.config.num_test}
            logger.info(f"Generating synthetic dataset in {root}: {counts}")

            sequences: dict[str, list[dict[str, Any]]] = {}
            for split in SPLITS:
                entries = []
                for index in range(counts[split]):
                    seed = self.sequence_seed(split, index)
                    spec, rendered, track_indices = self.build_sequence(seed)
                    name = f"seq_{index:05d}"
                    write_sequence(root / split / name, rendered, spec, track_indices)
                    entries.append({"name": name, "seed": seed, "tracks": int(len(track_indices))})
                    logger.debug(f"Wrote {split}/{name} (seed {seed}, {len(track_indices)} tracks)")
                sequences[split] = entries

            manifest = {"config": self.config.model_dump(), "sequences": sequences}
            write_dataset_manifest(root, manifest)
            logger.info(f"Synthetic dataset ready: {sum(counts.values())} sequences")
            return manifest
        except Exception as e:
            logger.error(f"Failed to generate dataset in {out_dir}: {e}")
            raise
