"""Command-line entry points: ``track3d synth|train|track|eval|segment``."""

import argparse
import shutil
import sys
from collections.abc import Callable, Sequence
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np
import torch
from pydantic import BaseModel, ValidationError

from . import __version__
from .config import get_settings, load_config_file
from .data.dataset import SPEC_FILE, TRACKS_FILE, GroundTruth, dataset_id
from .errors import DataError, NumericError, Track3DError, UsageError
from .evaluation.metrics import EvalInstance, clustering_accuracy, evaluate_instance
from .evaluation.report import write_report
from .geometry.camera import robust_binning
from .geometry.io import (
    DEPTH_DIR,
    FRAME_DIR,
    INTRINSICS_FILE,
    FrameBundle,
    load_frames,
    read_intrinsics,
)
from .network.model import Track3DModel
from .schemas.models import DepthBinning, RunManifest, SceneSpec, SynthConfig, TrainConfig
from .services.segmentation_service import (
    SegmentationService,
    load_embeddings,
    save_embeddings,
    write_labels,
)
from .services.synthesis_service import SynthesisService
from .services.tracking_service import (
    TrackingService,
    grid_queries,
    read_query_file,
    read_tracks,
    write_tracks,
)
from .services.training_service import (
    CHECKPOINT_DIR,
    METRICS_FILE,
    PREDICTORS,
    TrainingService,
    read_checkpoint_summary,
    write_config_snapshot,
)
from .utils.files import atomic_write_text, ensure_output_dir, sha256_json
from .utils.logger import get_logger, setup_logging
from .utils.overlay import save_overlays
from .utils.validators import parse_grid_spec, validate_cluster_count

logger = get_logger(__name__)

RUN_MANIFEST_FILE = "run_manifest.json"
EMBEDDINGS_FILE = "embeddings.npz"
LABELS_FILE = "labels.txt"
OVERLAY_DIR = "overlays"


class _ArgumentParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _config_section(path: str | None, section: str) -> dict[str, Any]:
    """The ``section`` mapping of a YAML config file (empty when no file is given)."""
    if path is None:
        return {}
    try:
        data = load_config_file(path)
    except FileNotFoundError as e:
        raise UsageError(f"Config file not found: {path}") from e
    except ValueError as e:
        raise UsageError(str(e)) from e
    value = data.get(section, {})
    if not isinstance(value, dict):
        raise UsageError(f"Config section {section!r} in {path} must be a mapping")
    return value


def _build_config(
    model_cls: type[BaseModel], values: dict[str, Any], overrides: dict[str, Any]
) -> Any:
    """Validate a config model from file values plus non-None CLI overrides."""
    merged = dict(values)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict):
            merged[key] = {**merged.get(key, {}), **value}
        else:
            merged[key] = value
    try:
        return model_cls.model_validate(merged)
    except ValidationError as e:
        raise UsageError(f"Invalid {model_cls.__name__}: {e}") from e


def write_run_manifest(
    out_dir: str | Path,
    command: str,
    config: dict[str, Any],
    *,
    checkpoint_hash: str | None = None,
    dataset: str | None = None,
    extra: dict[str, object] | None = None,
) -> RunManifest:
    """Write ``run_manifest.json`` into ``out_dir``."""
    manifest = RunManifest(
        command=command,
        config_hash=sha256_json(config),
        checkpoint_hash=checkpoint_hash,
        dataset_id=dataset,
        timestamp=datetime.now(timezone.utc),
        tool_version=get_settings().tool_version,
        extra={"config": config, **(extra or {})},
    )
    atomic_write_text(Path(out_dir) / RUN_MANIFEST_FILE, manifest.model_dump_json(indent=2))
    return manifest


def _parse_k(value: str) -> int | str:
    ok, message = validate_cluster_count(value)
    if not ok:
        raise UsageError(message or f"Invalid cluster count {value!r}")
    return value if value == "auto" else int(value)


def _video_binning(video_dir: Path, frames: list[FrameBundle], bins: int) -> DepthBinning:
    """Scene depth range of a synthetic sequence, otherwise robust percentiles."""
    spec_path = video_dir / SPEC_FILE
    if spec_path.is_file():
        try:
            spec = SceneSpec.model_validate_json(spec_path.read_text(encoding="utf-8"))
            return DepthBinning(z_min=spec.z_min, z_max=spec.z_max, d=bins)
        except ValidationError as e:
            logger.warning(f"Ignoring unreadable scene spec {spec_path}: {e}")
    return robust_binning([f.depth for f in frames], d=bins)


# 命令实现


def cmd_synth(args: argparse.Namespace) -> int:
    overrides = {
        "seed": args.seed,
        "num_bodies": args.bodies,
        "num_train": args.num_train,
        "num_test": args.num_test,
        "num_frames": args.frames,
    }
    config: SynthConfig = _build_config(
        SynthConfig, _config_section(args.config, "synth"), overrides
    )
    out_dir = Path(args.out)
    SynthesisService(config).generate(out_dir, force=args.force)
    write_run_manifest(out_dir, "synth", config.model_dump(), dataset=dataset_id(out_dir))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    beta = 0.0 if args.no_arap else args.beta
    overrides: dict[str, Any] = {
        "steps": args.steps,
        "seed": args.seed,
        "learning_rate": args.lr,
        "num_queries": args.num_queries,
        "checkpoint_interval": args.checkpoint_interval,
        "loss_weights": None if beta is None else {"beta": beta},
    }
    config: TrainConfig = _build_config(
        TrainConfig, _config_section(args.config, "train"), overrides
    )
    out_dir = Path(args.out)
    if out_dir.exists() and any(out_dir.iterdir()) and not (args.resume or args.force):
        raise DataError(f"Output directory {out_dir} is not empty (use --resume or --force)")
    if args.force and not args.resume:
        shutil.rmtree(out_dir / CHECKPOINT_DIR, ignore_errors=True)
        (out_dir / METRICS_FILE).unlink(missing_ok=True)
    out_dir.mkdir(parents=True, exist_ok=True)

    write_config_snapshot(out_dir, config)
    checkpoint = TrainingService(config, args.dataset, out_dir).train(resume=args.resume)
    summary = read_checkpoint_summary(checkpoint)
    write_run_manifest(
        out_dir,
        "train",
        config.model_dump(),
        checkpoint_hash=summary["weights_hash"],
        dataset=dataset_id(args.dataset),
        extra={"checkpoint": str(checkpoint), "ablation": config.ablation},
    )
    return 0


def cmd_track(args: argparse.Namespace) -> int:
    video_dir = Path(args.video)
    k = _parse_k(args.k)
    out_dir = ensure_output_dir(args.out, force=args.force)
    frames = load_frames(video_dir, args.depth_dir)
    model, payload = Track3DModel.load(args.checkpoint, map_location=get_settings().device)
    service = TrackingService(model)

    if args.grid is not None:
        try:
            cols, rows = parse_grid_spec(args.grid)
        except ValueError as e:
            raise UsageError(str(e)) from e
        pixels = grid_queries(cols, rows, frames[0].width, frames[0].height)
        ids = np.arange(pixels.shape[0])
        valid = service.valid_query_mask(frames, pixels).cpu().numpy()
        if not valid.all():
            logger.warning(f"Dropping {int((~valid).sum())} grid queries without frame-0 depth")
        if not valid.any():
            raise DataError("No grid query has valid frame-0 depth")
        pixels, ids = pixels[torch.from_numpy(valid)], ids[valid]
    else:
        ids, pixels = read_query_file(args.queries)

    binning = _video_binning(video_dir, frames, model.config.depth_bins)
    result = service.track_video(frames, pixels, binning)
    result.ids = ids

    labels = None
    if args.segment:
        assert result.embeddings is not None
        labels = SegmentationService(args.seed).segment(result.embeddings, k=k)
        write_labels(out_dir / LABELS_FILE, result.track_ids(), labels)
    count = write_tracks(out_dir / TRACKS_FILE, result, labels)
    if result.embeddings is not None:
        save_embeddings(out_dir / EMBEDDINGS_FILE, result.track_ids(), result.embeddings)
    if args.overlays:
        images = [f.image for f in frames]
        save_overlays(images, result.uv, result.visible, out_dir / OVERLAY_DIR, labels)
    logger.info(f"Wrote {count} track records to {out_dir / TRACKS_FILE}")

    config = {
        "video": str(video_dir),
        "depth_dir": args.depth_dir,
        "queries": args.queries,
        "grid": args.grid,
        "segment": args.segment,
        "k": k,
        "seed": args.seed,
        "binning": binning.model_dump(),
    }
    write_run_manifest(
        out_dir,
        "track",
        config,
        checkpoint_hash=payload["manifest"]["weights_hash"],
        extra={
            "checkpoint": str(args.checkpoint),
            "intrinsics": frames[0].intrinsics.model_dump(),
            "num_queries": result.num_tracks,
            "num_frames": result.num_frames,
        },
    )
    return 0


def align_tracks(pred: GroundTruth, gt: GroundTruth) -> GroundTruth:
    """Predicted tracks reordered to the ground truth's ids.

    Raises:
        DataError: If ground-truth ids are missing from the predictions or
            frame counts differ
    """
    index = {int(track_id): q for q, track_id in enumerate(pred.ids)}
    missing = [int(i) for i in gt.ids if int(i) not in index]
    if missing:
        suffix = "..." if len(missing) > 20 else ""
        raise DataError(f"Predictions lack {len(missing)} track ids: {missing[:20]}{suffix}")
    if pred.num_frames != gt.num_frames:
        raise DataError(f"Predictions cover {pred.num_frames} frames, ground truth {gt.num_frames}")
    return pred.subset(np.asarray([index[int(i)] for i in gt.ids]))


def _mask_areas(seq_dir: Path) -> tuple[tuple[int, int] | None, np.ndarray | None]:
    """Image size and per-frame foreground areas (pixels with depth) of a sequence folder."""
    if not (seq_dir / FRAME_DIR).is_dir() or not (seq_dir / DEPTH_DIR).is_dir():
        if (seq_dir / INTRINSICS_FILE).is_file():
            K = read_intrinsics(seq_dir / INTRINSICS_FILE)
            return (K.height, K.width), None
        return None, None
    frames = load_frames(seq_dir)
    areas = np.asarray([float(f.depth.valid_mask.sum()) for f in frames])
    return (frames[0].height, frames[0].width), areas


def evaluate_track_files(
    tracks_path: str | Path, gt_path: str | Path, image_size: tuple[int, int] | None = None
) -> dict[str, float]:
    """Metrics of a predicted tracks file against a ground-truth tracks file.

    The image size and object-mask areas come from the ground truth's sequence
    folder when present; ``image_size`` (``(h, w)``) overrides the size.

    Raises:
        DataError: If ids do not align or the image size cannot be determined
    """
    gt = read_tracks(gt_path)
    pred = align_tracks(read_tracks(tracks_path), gt)
    seq_size, areas = _mask_areas(Path(gt_path).parent)
    size = image_size or seq_size
    if size is None:
        raise DataError(f"Cannot determine the image size for {gt_path} (use --image-size)")
    if areas is not None and (len(areas) != gt.num_frames or np.any(areas <= 0)):
        areas = None
    if not gt.visible.any():
        areas = None

    inst = EvalInstance(
        gt_uv=gt.uv,
        gt_visible=gt.visible,
        image_size=size,
        pred_uv=pred.uv,
        pred_visible=pred.visible,
        gt_xyz=gt.positions,
        pred_xyz=pred.positions,
        mask_areas=areas,
    )
    metrics = evaluate_instance(inst)
    if pred.body_ids is not None and gt.body_ids is not None:
        metrics["clustering_accuracy"] = clustering_accuracy(pred.body_ids, gt.body_ids)
    return metrics


def cmd_eval(args: argparse.Namespace) -> int:
    out_dir = ensure_output_dir(args.out, force=args.force)
    if args.dataset is not None:
        if args.predictor == "model" and args.checkpoint is None:
            raise UsageError("--checkpoint is required for the model predictor")
        config: TrainConfig = _build_config(
            TrainConfig, _config_section(args.config, "train"), {"seed": args.seed}
        )
        service = TrainingService(config, args.dataset, out_dir)
        per_sequence, summary = service.evaluate(
            args.checkpoint, args.split, args.predictor, args.num_queries
        )
        run_config = {
            "dataset": str(args.dataset),
            "split": args.split,
            "predictor": args.predictor,
            "num_queries": args.num_queries,
            "seed": config.seed,
        }
        checkpoint_hash = None
        if args.checkpoint is not None:
            checkpoint_hash = read_checkpoint_summary(args.checkpoint)["weights_hash"]
        dataset = dataset_id(args.dataset)
    else:
        if args.tracks is None or args.gt is None:
            raise UsageError("eval needs --tracks and --gt, or --dataset")
        image_size = None
        if args.image_size is not None:
            try:
                width, height = parse_grid_spec(args.image_size)
            except ValueError as e:
                raise UsageError(str(e)) from e
            image_size = (height, width)
        name = Path(args.gt).parent.name or "sequence"
        metrics = evaluate_track_files(args.tracks, args.gt, image_size)
        per_sequence, summary = {name: metrics}, metrics
        run_config = {"tracks": str(args.tracks), "gt": str(args.gt), "image_size": image_size}
        checkpoint_hash, dataset = None, None

    text_path, _ = write_report(out_dir, per_sequence, summary)
    write_run_manifest(
        out_dir, "eval", run_config, checkpoint_hash=checkpoint_hash, dataset=dataset
    )
    print(text_path.read_text(encoding="utf-8"), end="")
    return 0


def cmd_segment(args: argparse.Namespace) -> int:
    k = _parse_k(args.k)
    tracks_path = Path(args.tracks)
    embeddings_path = (
        Path(args.embeddings) if args.embeddings else tracks_path.parent / EMBEDDINGS_FILE
    )
    if not embeddings_path.is_file():
        raise DataError(f"Embeddings file not found: {embeddings_path}")
    out_dir = ensure_output_dir(args.out, force=args.force)

    tracks = read_tracks(tracks_path)
    # rows follow tracks.ids so labels line up with tracks.uv for the overlays
    _, embeddings = load_embeddings(embeddings_path, ids=tracks.ids)
    labels = SegmentationService(args.seed).segment(embeddings, k=k)
    write_labels(out_dir / LABELS_FILE, tracks.ids, labels)
    if args.video is not None:
        frames = load_frames(args.video, args.depth_dir)
        images = [f.image for f in frames]
        save_overlays(images, tracks.uv, tracks.visible, out_dir / OVERLAY_DIR, labels)

    config = {
        "tracks": str(tracks_path),
        "embeddings": str(embeddings_path),
        "k": k,
        "seed": args.seed,
    }
    write_run_manifest(
        out_dir, "segment", config, extra={"num_labels": int(labels.max()) + 1}
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="track3d", description="3D long-range pixel tracking")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override TRACK3D_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    synth = sub.add_parser("synth", help="Generate a synthetic RGBD dataset")
    synth.add_argument("--config", help="YAML config file (section 'synth')")
    synth.add_argument("--out", required=True, help="Dataset output directory")
    synth.add_argument("--seed", type=int, default=None)
    synth.add_argument("--bodies", type=int, default=None, help="Rigid bodies per scene")
    synth.add_argument("--num-train", type=int, default=None)
    synth.add_argument("--num-test", type=int, default=None)
    synth.add_argument("--frames", type=int, default=None, help="Frames per sequence")
    synth.add_argument("--force", action="store_true", help="Overwrite a non-empty directory")
    synth.set_defaults(handler=cmd_synth)

    train = sub.add_parser("train", help="Train a tracking model")
    train.add_argument("--config", help="YAML config file (section 'train')")
    train.add_argument("--dataset", required=True, help="Dataset root written by 'synth'")
    train.add_argument("--out", required=True, help="Run directory")
    train.add_argument("--steps", type=int, default=None)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--lr", type=float, default=None, help="Peak learning rate")
    train.add_argument("--beta", type=float, default=None, help="ARAP loss weight")
    train.add_argument("--no-arap", action="store_true", help="Same as --beta 0")
    train.add_argument("--num-queries", type=int, default=None)
    train.add_argument("--checkpoint-interval", type=int, default=None)
    train.add_argument("--resume", action="store_true", help="Continue from the last checkpoint")
    train.add_argument("--force", action="store_true", help="Discard earlier checkpoints")
    train.set_defaults(handler=cmd_train)

    track = sub.add_parser("track", help="Track query pixels through a video")
    track.add_argument("--checkpoint", required=True, help="Checkpoint directory")
    track.add_argument("--video", required=True, help="Directory with frames/, depth/")
    track.add_argument("--depth-dir", default=None, help="Alternative depth directory")
    queries = track.add_mutually_exclusive_group(required=True)
    queries.add_argument("--queries", help="Query file ('u v' or 'id u v' per line)")
    queries.add_argument("--grid", help="Uniform frame-0 query grid COLSxROWS, e.g. 8x8")
    track.add_argument("--out", required=True, help="Output directory")
    track.add_argument("--overlays", action="store_true", help="Render track overlays")
    track.add_argument("--segment", action="store_true", help="Label tracks by rigid part")
    track.add_argument("--k", default="auto", help="Cluster count or 'auto'")
    track.add_argument("--seed", type=int, default=0, help="Clustering seed")
    track.add_argument("--force", action="store_true")
    track.set_defaults(handler=cmd_track)

    evaluate = sub.add_parser("eval", help="Evaluate tracks against ground truth")
    evaluate.add_argument("--tracks", help="Predicted tracks file")
    evaluate.add_argument("--gt", help="Ground-truth tracks file")
    evaluate.add_argument("--image-size", default=None, help="WIDTHxHEIGHT of the frames")
    evaluate.add_argument("--dataset", default=None, help="Evaluate a whole dataset split")
    evaluate.add_argument("--checkpoint", default=None)
    evaluate.add_argument("--split", default="test")
    evaluate.add_argument("--predictor", choices=PREDICTORS, default="model")
    evaluate.add_argument("--num-queries", type=int, default=None)
    evaluate.add_argument("--config", help="YAML config file (section 'train')")
    evaluate.add_argument("--seed", type=int, default=None)
    evaluate.add_argument("--out", required=True, help="Report directory")
    evaluate.add_argument("--force", action="store_true")
    evaluate.set_defaults(handler=cmd_eval)

    segment = sub.add_parser("segment", help="Cluster tracks into rigid parts")
    segment.add_argument("--tracks", required=True, help="Tracks file written by 'track'")
    segment.add_argument("--embeddings", default=None, help="Defaults to embeddings.npz beside it")
    segment.add_argument("--k", default="auto", help="Cluster count or 'auto'")
    segment.add_argument("--seed", type=int, default=0)
    segment.add_argument("--video", default=None, help="Frames for colored overlays")
    segment.add_argument("--depth-dir", default=None)
    segment.add_argument("--out", required=True)
    segment.add_argument("--force", action="store_true")
    segment.set_defaults(handler=cmd_segment)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line and return its exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_level)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except NumericError as e:
        logger.error(f"Numeric failure: {e}")
        return e.exit_code
    except DataError as e:
        logger.error(f"Data error: {e}")
        return e.exit_code
    except Track3DError as e:
        logger.error(str(e))
        return e.exit_code
    except ValueError as e:
        logger.error(f"Invalid input: {e}")
        return DataError.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130


if __name__ == "__main__":
    sys.exit(main())
