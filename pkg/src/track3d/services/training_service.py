"""Windowed training loop, checkpointing and dataset evaluation."""

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch

from ..config import Settings, get_settings
from ..data.dataset import GroundTruth, SequenceData, list_sequences, load_sequence
from ..errors import DataError
from ..evaluation.metrics import EvalInstance, aggregate, clustering_accuracy, evaluate_instance
from ..geometry.camera import robust_binning
from ..geometry.io import FrameBundle
from ..network.losses import (
    LossParts,
    arap_loss,
    sample_pairs,
    total_loss,
    traj_loss,
    vis_loss,
)
from ..network.model import Track3DModel
from ..schemas.models import DepthBinning, TrainConfig
from ..utils.files import append_jsonl, atomic_write_text, read_jsonl, write_jsonl
from ..utils.logger import get_logger
from ..utils.validators import ensure_finite
from .segmentation_service import SegmentationService
from .tracking_service import TrackingService, propagate

logger = get_logger(__name__)

CHECKPOINT_DIR = "checkpoints"
METRICS_FILE = "metrics.jsonl"
EVAL_FILE = "eval.jsonl"
PREDICTORS = ("model", "ground_truth", "frozen")


def checkpoint_name(step: int) -> str:
    return f"checkpoint_{step:06d}"


def latest_checkpoint(out_dir: str | Path) -> Path | None:
    """Most recent ``checkpoint_NNNNNN`` directory under ``out_dir/checkpoints``."""
    root = Path(out_dir) / CHECKPOINT_DIR
    if not root.is_dir():
        return None
    candidates = sorted(p for p in root.glob("checkpoint_*") if p.is_dir())
    return candidates[-1] if candidates else None


def configure_numerics(settings: Settings, seed: int) -> None:
    """Seed torch and, in deterministic mode, pin threads and kernels."""
    torch.manual_seed(seed)
    if settings.deterministic:
        torch.set_num_threads(settings.num_threads)
        torch.use_deterministic_algorithms(True, warn_only=True)


@dataclass
class TrainingBatch:
    """One window of one sequence with its sampled queries."""

    frames: list[FrameBundle]
    queries: torch.Tensor  # (N, 3)
    gt_positions: torch.Tensor  # (N, T, 3)
    gt_visible: torch.Tensor  # (N, T)
    binning: DepthBinning
    sequence: str
    start: int
    tracks: np.ndarray | None = None  # (N,) ground-truth track indices
    init_positions: torch.Tensor | None = None  # (N, T, 3) propagated initialization


def sequence_binning(sequence: SequenceData, bins: int) -> DepthBinning:
    """Scene depth range when known, otherwise percentiles of the sequence's depth."""
    if sequence.spec is not None:
        return DepthBinning(z_min=sequence.spec.z_min, z_max=sequence.spec.z_max, d=bins)
    return robust_binning([f.depth for f in sequence.frames], d=bins)


def frame0_queries(ground_truth: GroundTruth, limit: int | None, seed: int) -> np.ndarray:
    """Indices of tracks visible at frame 0, optionally a seeded subset of ``limit``."""
    candidates = np.flatnonzero(ground_truth.visible[:, 0])
    if candidates.size == 0:
        raise DataError("No ground-truth track is visible at frame 0")
    if limit is None or candidates.size <= limit:
        return candidates
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(candidates, size=limit, replace=False))


class TrainingService:
    """Trains a :class:`Track3DModel` on a synthetic dataset."""

    def __init__(
        self,
        config: TrainConfig,
        dataset_root: str | Path,
        out_dir: str | Path,
        settings: Settings | None = None,
    ):
        self.config = config
        self.dataset_root = Path(dataset_root)
        self.out_dir = Path(out_dir)
        self.settings = settings or get_settings()
        self._splits: dict[str, list[SequenceData]] = {}

    @property
    def device(self) -> torch.device:
        return torch.device(self.settings.device)

    def load_split(self, split: str) -> list[SequenceData]:
        if split not in self._splits:
            paths = list_sequences(self.dataset_root, split)
            self._splits[split] = [load_sequence(p) for p in paths]
            logger.info(f"Loaded {len(paths)} {split} sequences from {self.dataset_root}")
        return self._splits[split]

    def sample_batch(self, sequence: SequenceData, rng: np.random.Generator) -> TrainingBatch:
        """Random window of ``sequence`` with queries visible at its first frame.

        Raises:
            DataError: If the sequence is shorter than a window or no track is
                visible at the sampled window start
        """
        window = self.config.model.window
        length = len(sequence.frames)
        if length < window:
            raise DataError(f"{sequence.name} has {length} frames, fewer than the window {window}")
        start = int(rng.integers(0, length - window + 1))
        gt = sequence.ground_truth.window(start, start + window)
        candidates = np.flatnonzero(gt.visible[:, 0])
        if candidates.size == 0:
            raise DataError(f"{sequence.name}: no track visible at frame {start}")
        count = min(self.config.num_queries, candidates.size)
        chosen = np.sort(rng.choice(candidates, size=count, replace=False))
        positions = torch.from_numpy(gt.positions[chosen]).float()
        return TrainingBatch(
            frames=sequence.frames[start : start + window],
            queries=positions[:, 0].clone(),
            gt_positions=positions,
            gt_visible=torch.from_numpy(gt.visible[chosen]).float(),
            binning=sequence_binning(sequence, self.config.model.depth_bins),
            sequence=sequence.name,
            start=start,
            tracks=chosen,
        )

    def propagated_batch(
        self, model: Track3DModel, batch: TrainingBatch, sequence: SequenceData
    ) -> TrainingBatch | None:
        """The window half a window after ``batch``, initialized from the model's output.

        ``batch`` is run without gradients and its final positions are carried
        into the next window with :func:`propagate`, the way tracking chains
        windows. The same tracks are supervised; queries are the propagated
        positions at the new window's first frame.

        Returns:
            The chained batch, or ``None`` if the sequence ends first
        """
        window = self.config.model.window
        start = batch.start + window // 2
        if batch.tracks is None or start + window > len(sequence.frames):
            return None
        with torch.no_grad():
            out = model(batch.frames, batch.queries.to(model.device), batch.binning)
        prev_span = (batch.start, batch.start + window)
        init = propagate(out.positions.detach().cpu(), prev_span, (start, start + window))
        gt = sequence.ground_truth.window(start, start + window)
        return TrainingBatch(
            frames=sequence.frames[start : start + window],
            queries=init[:, 0].clone(),
            gt_positions=torch.from_numpy(gt.positions[batch.tracks]).float(),
            gt_visible=torch.from_numpy(gt.visible[batch.tracks]).float(),
            binning=batch.binning,
            sequence=sequence.name,
            start=start,
            tracks=batch.tracks,
            init_positions=init,
        )

    def compute_step_loss(
        self,
        model: Track3DModel,
        batch: TrainingBatch,
        pair_generator: torch.Generator | None = None,
        step: int | None = None,
    ) -> tuple[torch.Tensor, LossParts]:
        """Forward one batch and return ``(total, parts)``.

        The ARAP term is always computed and logged; its weight decides whether
        it enters the total.

        Raises:
            NumericError: If the total loss is not finite
        """
        weights = self.config.loss_weights
        device = model.device
        queries = batch.queries.to(device)
        init = None if batch.init_positions is None else batch.init_positions.to(device)
        out = model(batch.frames, queries, batch.binning, init)
        states = [s.positions for s in out.states]
        pairs = sample_pairs(queries.shape[0], self.config.max_pairs, pair_generator).to(device)
        parts = LossParts(
            traj=traj_loss(states, batch.gt_positions.to(device), weights.gamma_decay),
            vis=vis_loss(out.visibility_logits, batch.gt_visible.to(device)),
            arap=arap_loss(states, out.embeddings, queries, pairs, weights.gamma_decay),
        )
        total = total_loss(parts, weights)
        ensure_finite(total, "total_loss", step=step, sequence=batch.sequence, **parts.as_dict())
        return total, parts

    def _truncate_metrics(self, path: Path, last_step: int) -> None:
        if not path.exists():
            return
        kept = [r for r in read_jsonl(path) if int(r.get("step", -1)) <= last_step]
        write_jsonl(path, kept)

    def _save_checkpoint(
        self,
        model: Track3DModel,
        step: int,
        optimizer: torch.optim.Optimizer,
        scheduler: torch.optim.lr_scheduler.LambdaLR,
        rng: np.random.Generator,
        pair_generator: torch.Generator,
    ) -> Path:
        extra_state = {
            "optimizer": optimizer.state_dict(),
            "scheduler": scheduler.state_dict(),
            "numpy_rng": rng.bit_generator.state,
            "pair_rng": pair_generator.get_state(),
            "torch_rng": torch.get_rng_state(),
        }
        manifest = {
            "step": step,
            "seed": self.config.seed,
            "ablation": self.config.ablation,
            "tool_version": self.settings.tool_version,
            "train": self.config.model_dump(exclude={"model"}),
        }
        path = self.out_dir / CHECKPOINT_DIR / checkpoint_name(step)
        return model.save(path, extra_state=extra_state, manifest_extra=manifest)

    def train(self, resume: bool = True) -> Path:
        """Run the training loop.

        Checkpoints are written after step 0, every ``checkpoint_interval`` steps
        and after the last step. With ``resume`` the loop continues from the
        latest checkpoint, restoring optimizer, scheduler and RNG state.

        Returns:
            Directory of the last checkpoint

        Raises:
            DataError: If the dataset is missing or malformed
            NumericError: If a loss becomes non-finite (diagnostics carry the step)
        """
        cfg = self.config
        configure_numerics(self.settings, cfg.seed)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = self.out_dir / METRICS_FILE

        model = Track3DModel(cfg.model).to(self.device)
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
        warmup = cfg.warmup_steps
        scheduler = torch.optim.lr_scheduler.LambdaLR(
            optimizer, lambda s: min(1.0, (s + 1) / warmup) if warmup else 1.0
        )
        rng = np.random.default_rng(cfg.seed)
        pair_generator = torch.Generator().manual_seed(cfg.seed)

        start_step = 0
        last_checkpoint = latest_checkpoint(self.out_dir) if resume else None
        if last_checkpoint is not None:
            restored, payload = Track3DModel.load(last_checkpoint, map_location=self.device)
            model.load_state_dict(restored.state_dict())
            optimizer.load_state_dict(payload["optimizer"])
            scheduler.load_state_dict(payload["scheduler"])
            rng.bit_generator.state = payload["numpy_rng"]
            pair_generator.set_state(payload["pair_rng"])
            torch.set_rng_state(payload["torch_rng"])
            start_step = int(payload["manifest"]["step"]) + 1
            self._truncate_metrics(metrics_path, start_step - 1)
            logger.info(f"Resuming from {last_checkpoint} at step {start_step}")
        elif metrics_path.exists():
            metrics_path.unlink()

        sequences = self.load_split("train")
        micro_batches = cfg.batch_size * cfg.grad_accum
        logger.info(
            f"Training for {cfg.steps} steps ({cfg.ablation}), lr {cfg.learning_rate}, "
            f"{cfg.num_queries} queries, {micro_batches} sequences per step"
        )

        checkpoint = last_checkpoint
        for step in range(start_step, cfg.steps):
            model.train()
            optimizer.zero_grad(set_to_none=True)
            sums = {"L_traj": 0.0, "L_vis": 0.0, "L_arap": 0.0, "total": 0.0}
            for _ in range(micro_batches):
                sequence = sequences[int(rng.integers(len(sequences)))]
                batches = [self.sample_batch(sequence, rng)]
                if cfg.propagated_window_prob and rng.random() < cfg.propagated_window_prob:
                    chained = self.propagated_batch(model, batches[0], sequence)
                    if chained is not None:
                        batches.append(chained)
                share = micro_batches * len(batches)
                for batch in batches:
                    total, parts = self.compute_step_loss(model, batch, pair_generator, step)
                    (total / share).backward()
                    for key, value in parts.as_dict().items():
                        sums[key] += value / share
                    sums["total"] += float(total.detach()) / share

            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            lr = scheduler.get_last_lr()[0]
            optimizer.step()
            scheduler.step()

            append_jsonl(metrics_path, {"step": step, "lr": lr, **sums})
            logger.debug(f"Step {step}: total {sums['total']:.4f}")
            if step % 50 == 0:
                logger.info(
                    f"Step {step}/{cfg.steps}: total {sums['total']:.4f} "
                    f"(traj {sums['L_traj']:.4f}, vis {sums['L_vis']:.4f}, "
                    f"arap {sums['L_arap']:.4f})"
                )

            if step % cfg.checkpoint_interval == 0 or step == cfg.steps - 1:
                checkpoint = self._save_checkpoint(
                    model, step, optimizer, scheduler, rng, pair_generator
                )
            if cfg.eval_interval and (step + 1) % cfg.eval_interval == 0:
                self._periodic_eval(model, step)

        if checkpoint is None:
            raise DataError(f"No checkpoint produced in {self.out_dir}")
        logger.info(f"Training finished, last checkpoint {checkpoint}")
        return checkpoint

    def _periodic_eval(self, model: Track3DModel, step: int) -> None:
        try:
            held_out = self.load_split("test")[:1]
        except DataError as e:
            logger.warning(f"Skipping periodic evaluation: {e}")
            return
        per_sequence = {s.name: self.evaluate_sequence(model, s, "model") for s in held_out}
        append_jsonl(self.out_dir / EVAL_FILE, {"step": step, **aggregate(per_sequence.values())})

    def evaluate_sequence(
        self,
        model: Track3DModel | None,
        sequence: SequenceData,
        predictor: str = "model",
        num_queries: int | None = None,
    ) -> dict[str, float]:
        """Metrics of one sequence under the queried-first protocol.

        Args:
            model: Trained model, required for the ``model`` predictor
            sequence: Sequence with ground truth
            predictor: ``model``, ``ground_truth`` (oracle) or ``frozen``
                (every frame repeats the query; always visible)
            num_queries: Optional cap on the number of queries

        Raises:
            ValueError: If the predictor is unknown or a model is missing
        """
        if predictor not in PREDICTORS:
            raise ValueError(f"Unknown predictor {predictor!r}, expected one of {PREDICTORS}")
        chosen = frame0_queries(sequence.ground_truth, num_queries, self.config.seed)
        gt = sequence.ground_truth.subset(chosen)
        h, w = sequence.frames[0].height, sequence.frames[0].width
        embeddings = None

        if predictor == "ground_truth":
            pred_xyz, pred_uv, pred_visible = gt.positions, gt.uv, gt.visible
        elif predictor == "frozen":
            frames = gt.num_frames
            pred_xyz = np.repeat(gt.positions[:, :1], frames, axis=1)
            pred_uv = np.repeat(gt.uv[:, :1], frames, axis=1)
            pred_visible = np.ones_like(gt.visible)
        else:
            if model is None:
                raise ValueError("The model predictor needs a model")
            binning = sequence_binning(sequence, model.config.depth_bins)
            result = TrackingService(model).track_video(
                sequence.frames, torch.from_numpy(gt.uv[:, 0]).float(), binning
            )
            pred_xyz, pred_uv, pred_visible = result.positions, result.uv, result.visible
            embeddings = result.embeddings

        inst = EvalInstance(
            gt_uv=gt.uv,
            gt_visible=gt.visible,
            image_size=(h, w),
            pred_uv=pred_uv,
            pred_visible=pred_visible,
            gt_xyz=gt.positions,
            pred_xyz=pred_xyz,
        )
        metrics = evaluate_instance(inst)
        if embeddings is not None and gt.body_ids is not None and len(gt.ids) >= 2:
            num_bodies = int(len(np.unique(gt.body_ids)))
            labels = SegmentationService(self.config.seed).segment(embeddings, k=num_bodies)
            metrics["clustering_accuracy"] = clustering_accuracy(labels, gt.body_ids)
        return metrics

    def evaluate(
        self,
        checkpoint_dir: str | Path | None,
        split: str = "test",
        predictor: str = "model",
        num_queries: int | None = None,
    ) -> tuple[dict[str, dict[str, float]], dict[str, float]]:
        """Evaluate every sequence of a split.

        Returns:
            Tuple of (per-sequence metrics, aggregate means)

        Raises:
            DataError: If the checkpoint or dataset is missing or inconsistent
        """
        try:
            model = None
            if predictor == "model":
                if checkpoint_dir is None:
                    raise DataError("Evaluating the model predictor requires a checkpoint")
                model, _ = Track3DModel.load(checkpoint_dir, map_location=self.device)
            logger.info(f"Evaluating {predictor} predictor on {split} split of {self.dataset_root}")
            per_sequence = {
                s.name: self.evaluate_sequence(model, s, predictor, num_queries)
                for s in self.load_split(split)
            }
            summary = aggregate(per_sequence.values())
            logger.info(f"Evaluation done: {summary}")
            return per_sequence, summary
        except Exception as e:
            logger.error(f"Evaluation failed: {e}")
            raise


def write_config_snapshot(out_dir: str | Path, config: TrainConfig) -> Path:
    path = Path(out_dir) / "train_config.json"
    atomic_write_text(path, config.model_dump_json(indent=2))
    return path


def read_checkpoint_summary(checkpoint_dir: str | Path) -> dict[str, Any]:
    """Manifest fields of a checkpoint (step, seed, ablation, hashes)."""
    return Track3DModel.read_manifest(checkpoint_dir)
