"""End-to-end orchestration of the detection/tracking/completion pipeline."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from . import dataio
from .config import PipelineConfig
from .errors import ConfigError, DataError, StageError
from .features import FeatureGrid, compute_hog
from .kinematics import (
    LimbLengths,
    complete_skeleton,
    estimate_limb_lengths,
    lift_to_3d,
)
from .metrics import EvalReport, evaluate
from .model import PartsModel, infer_from_features, load_model, save_model
from .preprocess import remove_background
from .render import render_overlays
from .skeleton import REDUCED10, skeleton_by_kind
from .synth import FigureSpec, MotionScript, write_corpus
from .tracker import PoseTracker, default_pairing
from .training import NegativeSample, PositiveSample, train_toy
from .types import Joint, Pose, RgbdFrame

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# shared stages

def preprocess_and_features(frame: RgbdFrame, config: PipelineConfig
                            ) -> tuple[RgbdFrame, FeatureGrid, FeatureGrid]:
    cleaned, _ = remove_background(frame, config.preprocess)
    fm = compute_hog(cleaned.rgb, config.features.cell_size, config.features.bin_count)
    fd = compute_hog(cleaned.depth, config.features.cell_size, config.features.bin_count)
    return cleaned, fm, fd


def _scales(config: PipelineConfig) -> list[float]:
    if not config.model.pyramid:
        return [1.0]
    steps = int(round(config.model.pyramid_octaves * 8))
    return [config.model.pyramid_scale ** -k for k in range(steps + 1)]


def detect_frame(model: PartsModel, frame: RgbdFrame, config: PipelineConfig
                 ) -> tuple[list[Pose], RgbdFrame]:
    """Preprocess + features + inference, optionally across a scale pyramid.

    Joint coordinates are reported in the original pixel frame.
    """
    cleaned, _ = remove_background(frame, config.preprocess)
    best: list[Pose] = []
    for scale in _scales(config):
        if scale == 1.0:
            scaled = cleaned
        else:
            h = int(round(frame.height * scale))
            w = int(round(frame.width * scale))
            scaled = RgbdFrame(
                rgb=cv2.resize(cleaned.rgb, (w, h), interpolation=cv2.INTER_AREA),
                depth=cv2.resize(cleaned.depth, (w, h), interpolation=cv2.INTER_NEAREST),
                index=frame.index,
            )
        fm = compute_hog(scaled.rgb, config.features.cell_size, config.features.bin_count)
        fd = compute_hog(scaled.depth, config.features.cell_size, config.features.bin_count)
        poses = infer_from_features(
            model, fm, fd,
            threshold=config.model.threshold,
            top_k=config.model.top_k,
            nms_iou=config.model.nms_iou,
            engine=config.model.engine,
        )
        if scale != 1.0:
            poses = [
                p.with_positions(p.positions() / scale) for p in poses
            ]
        best.extend(poses)
    best.sort(key=lambda p: -p.total_score)
    return best[: config.model.top_k], cleaned


# ---------------------------------------------------------------------------
# synth

def run_synth(config: PipelineConfig, out_dir: str | Path | None = None) -> Path:
    figure_kwargs = dict(config.synth.figure)
    script = figure_kwargs.pop("script", None)
    if script is not None:
        figure_kwargs["script"] = MotionScript(**script)
    try:
        spec = FigureSpec(**figure_kwargs)
    except (TypeError, DataError) as e:
        raise ConfigError(f"synth.figure: {e}") from e
    target = Path(out_dir) if out_dir is not None else config.resolve(config.paths.dataset)
    return write_corpus(target, spec, config.synth.frame_count, config.synth.seed,
                        with_figure=not config.synth.negatives)


# ---------------------------------------------------------------------------
# train

def _reduced_cells(pose: Pose, bbox_unused, cell_size: int, grid_shape) -> np.ndarray:
    """Annotated full14 joints mapped to reduced10 grid cells."""
    cells = np.zeros((REDUCED10.part_count, 2), dtype=np.int64)
    for pid, name in enumerate(REDUCED10.names):
        j = pose.joint(pose.skeleton().index(name))
        cy = int(np.clip(j.y // cell_size, 0, grid_shape[0] - 1))
        cx = int(np.clip(j.x // cell_size, 0, grid_shape[1] - 1))
        cells[pid] = (cy, cx)
    return cells


def run_train(config: PipelineConfig, progress=print) -> Path:
    dataset = config.resolve(config.paths.dataset)
    negatives_dir = config.resolve(config.paths.negatives)
    annotations = dataio.load_annotations(dataset / "annotations.json")
    if annotations.skeleton_kind != "full14":
        raise DataError("training annotations must use the full14 skeleton")
    by_frame = annotations.by_frame()

    positives: list[PositiveSample] = []
    for frame in dataio.load_sequence(dataset):
        entry = by_frame.get(frame.index)
        if entry is None:
            continue
        _, fm, fd = preprocess_and_features(frame, config)
        cells = _reduced_cells(entry.pose, entry.bbox, config.features.cell_size,
                               fm.grid_shape)
        positives.append(PositiveSample(fm=fm, fd=fd, cells=cells))
    if not positives:
        raise ConfigError(f"no annotated frames found under {dataset}")

    negatives: list[NegativeSample] = []
    if negatives_dir.is_dir():
        for frame in dataio.load_sequence(negatives_dir):
            _, fm, fd = preprocess_and_features(frame, config)
            negatives.append(NegativeSample(fm=fm, fd=fd))
    else:
        log.warning("negatives directory %s missing; training without negatives",
                    negatives_dir)

    def report(epoch, best_obj, raw_obj):
        if progress is not None:
            progress(f"epoch {epoch:3d}  objective {best_obj:.6g}  (iterate {raw_obj:.6g})")

    model, train_log = train_toy(config.train, REDUCED10, positives, negatives,
                                 progress=report)
    model_path = config.resolve(config.paths.model)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, model_path)

    out_dir = config.resolve(config.paths.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "train_log.json").write_text(json.dumps({
        "objective": train_log.objectives,
        "iterate_objective": train_log.raw_objectives,
        "converged": train_log.converged,
    }, indent=1), encoding="utf-8")
    return model_path


# ---------------------------------------------------------------------------
# infer

@dataclass
class FrameErrorRecord:
    frame: int
    stage: str
    error: str


def _limb_lengths_from_config(config: PipelineConfig) -> LimbLengths | None:
    raw = config.kinematics.limb_lengths
    if raw is None:
        return None
    try:
        return LimbLengths(**raw)
    except (TypeError, DataError) as e:
        raise ConfigError(f"kinematics.limb_lengths: {e}") from e


def _dump_grid(path_base: Path, array: np.ndarray, meta: dict) -> None:
    np.ascontiguousarray(array, dtype="<f4").tofile(str(path_base) + ".bin")
    meta = {**meta, "dtype": "<f4", "shape": list(array.shape)}
    Path(str(path_base) + ".json").write_text(
        json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")


def run_infer(
    config: PipelineConfig,
    use_tracker: bool | None = None,
    use_completion: bool | None = None,
    strict: bool = False,
    dump_score_maps: bool = False,
    dump_features: bool = False,
    diagnostics_csv: str | Path | None = None,
) -> Path:
    """Detect (and optionally track and complete) every frame of the dataset.

    Per-frame stage failures are recorded and skipped unless strict.  Returns
    the pose JSON path.
    """
    if use_tracker is None:
        use_tracker = config.tracker.enabled
    if use_completion is None:
        use_completion = config.kinematics.enabled

    model_path = config.resolve(config.paths.model)
    if not model_path.is_file():
        raise ConfigError(f"model file not found: {model_path}")
    model = load_model(model_path)
    dataset = config.resolve(config.paths.dataset)
    out_dir = config.resolve(config.paths.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    frames: list[RgbdFrame] = []
    cleaned_frames: dict[int, RgbdFrame] = {}
    detections: dict[int, list[Pose]] = {}
    errors: list[FrameErrorRecord] = []
    for frame in dataio.load_sequence(dataset):
        try:
            poses, cleaned = detect_frame(model, frame, config)
            detections[frame.index] = poses
            cleaned_frames[frame.index] = cleaned
            if dump_features:
                fm = compute_hog(cleaned.rgb, config.features.cell_size,
                                 config.features.bin_count)
                _dump_grid(out_dir / f"features{frame.index:05d}_rgb", fm.cells,
                           {"cell_size": fm.cell_size, "bins": fm.bin_count})
                fd = compute_hog(cleaned.depth, config.features.cell_size,
                                 config.features.bin_count)
                _dump_grid(out_dir / f"features{frame.index:05d}_depth", fd.cells,
                           {"cell_size": fd.cell_size, "bins": fd.bin_count})
            if dump_score_maps:
                fm = compute_hog(cleaned.rgb, config.features.cell_size,
                                 config.features.bin_count)
                fd = compute_hog(cleaned.depth, config.features.cell_size,
                                 config.features.bin_count)
                _, maps = infer_from_features(model, fm, fd, engine=config.model.engine,
                                              return_maps=True)
                for part, grids in sorted(maps.part_scores.items()):
                    _dump_grid(
                        out_dir / f"scores{frame.index:05d}_part{part:02d}", grids,
                        {"part": model.skeleton.names[part],
                         "cell_size": model.cell_size})
        except (DataError, ValueError) as e:
            record = FrameErrorRecord(frame.index, "detect", str(e))
            errors.append(record)
            if strict:
                raise StageError(f"frame {frame.index}: {e}") from e
            log.error("frame %d failed at detection: %s", frame.index, e)
        frames.append(frame)

    tracked_positions: dict[int, np.ndarray] = {}
    if use_tracker and detections:
        pairing = config.tracker.pairing
        if pairing == "default":
            pairing = default_pairing(model.skeleton)
        tracker = PoseTracker(
            pairing=pairing, coupling=config.tracker.coupling,
            q_scale=config.tracker.q_scale, r_scale=config.tracker.r_scale,
            p0_scale=config.tracker.p0_scale,
        )
        for frame in frames:
            poses = detections.get(frame.index)
            if not poses:
                continue
            best = poses[0]
            measured = best.positions()
            if config.tracker.min_joint_score is not None:
                for j in best.joints:
                    if j.score < config.tracker.min_joint_score:
                        measured[j.part_id] = np.nan
            tracked_positions[frame.index] = tracker.feed(measured)
        if diagnostics_csv is not None:
            with open(diagnostics_csv, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["frame", "innovation_norm", "eps_filter",
                                 "eps_previous", "chosen"])
                for d in tracker.diagnostics:
                    writer.writerow([d.frame, f"{d.innovation_norm:.9g}",
                                     f"{d.eps_filter:.9g}", f"{d.eps_previous:.9g}",
                                     d.chosen])

    limb_lengths = _limb_lengths_from_config(config)
    records = []
    lifted_cache: dict[int, object] = {}
    if use_completion and detections:
        # limb lengths estimated over the sequence unless configured
        if limb_lengths is None:
            pool = []
            for frame in frames:
                poses = detections.get(frame.index)
                if not poses:
                    continue
                pose = poses[0]
                if frame.index in tracked_positions:
                    pose = pose.with_positions(tracked_positions[frame.index])
                pool.append(lift_to_3d(pose, cleaned_frames[frame.index].depth,
                                       config.kinematics.lift_window))
            try:
                limb_lengths = estimate_limb_lengths(
                    pool, config.kinematics.mm_per_px,
                    config.kinematics.upper_fraction)
            except DataError as e:
                errors.append(FrameErrorRecord(-1, "limb_lengths", str(e)))
                if strict:
                    raise StageError(str(e)) from e
                use_completion = False

    previous_completed = None
    for frame in frames:
        poses = detections.get(frame.index)
        if not poses:
            continue
        pose = poses[0]
        if frame.index in tracked_positions:
            pose = pose.with_positions(tracked_positions[frame.index])
        try:
            out_pose = pose
            if use_completion:
                lifted = lift_to_3d(pose, cleaned_frames[frame.index].depth,
                                    config.kinematics.lift_window)
                completed = complete_skeleton(
                    lifted, limb_lengths,
                    mm_per_px=config.kinematics.mm_per_px,
                    branches=config.kinematics.branches,
                    previous=(previous_completed
                              if config.kinematics.branch_policy == "previous" else None),
                )
                previous_completed = completed
                out_pose = completed
            records.append((frame.index, out_pose))
        except (DataError, ValueError) as e:
            errors.append(FrameErrorRecord(frame.index, "complete", str(e)))
            if strict:
                raise StageError(f"frame {frame.index}: {e}") from e
            log.error("frame %d failed at completion: %s", frame.index, e)
            records.append((frame.index, pose))

    poses_path = out_dir / "poses.json"
    dataio.write_pose_json(records, poses_path)
    detections_path = out_dir / "detections.json"
    det_records = [
        (idx, pose) for idx in sorted(detections) for pose in detections[idx]
    ]
    _write_detections(det_records, detections_path)
    if errors:
        (out_dir / "errors.json").write_text(json.dumps(
            [vars(e) for e in errors], indent=1), encoding="utf-8")
    return poses_path


def _write_detections(records, path: Path) -> None:
    """All scored candidates per frame (for average-precision evaluation)."""
    dataio.write_pose_json(records, path)


# ---------------------------------------------------------------------------
# eval / render

def run_eval(predictions_path, annotations_path, alpha: float,
             detections_path=None) -> EvalReport:
    gt = dataio.load_annotations(annotations_path)
    loaded = dataio.read_pose_json(predictions_path)
    predictions = []
    for frame, pose in loaded:
        predictions.append((frame, _match_skeleton(pose, gt.skeleton_kind)))
    if detections_path is not None:
        det_loaded = dataio.read_pose_json(detections_path)
    else:
        det_loaded = loaded
    detections: dict[int, list[Pose]] = {}
    for frame, pose in det_loaded:
        detections.setdefault(frame, []).append(_match_skeleton(pose, gt.skeleton_kind))
    return evaluate(predictions, detections.items(), gt, alpha)


def _match_skeleton(pose, target_kind: str) -> Pose:
    """Project a pose (2-D or 3-D) onto the annotation skeleton by part name."""
    source = pose.skeleton()
    target = skeleton_by_kind(target_kind)
    joints = []
    for pid, name in enumerate(target.names):
        try:
            j = pose.joint(source.index(name))
        except KeyError:
            raise DataError(
                f"prediction skeleton {pose.skeleton_kind} lacks part {name!r} "
                f"needed by {target_kind}"
            ) from None
        joints.append(Joint(part_id=pid, x=j.x, y=j.y,
                            type_id=getattr(j, "type_id", 0),
                            score=getattr(j, "score", 0.0)))
    return Pose(joints=tuple(joints), skeleton_kind=target_kind,
                total_score=pose.total_score)


def run_render(dataset_dir, poses_path, out_dir) -> list[Path]:
    poses = dict(dataio.read_pose_json(poses_path))
    frames = list(dataio.load_sequence(dataset_dir))
    known = {f.index for f in frames}
    orphans = sorted(set(poses) - known)
    if orphans:
        raise DataError(f"poses reference frames missing from the sequence: {orphans}")
    return render_overlays(frames, poses, out_dir)
