"""Dataset ingestion and pose serialization.

File formats
------------
Manifest: UTF-8 text, one line per frame, tab separated::

    <rgb_relpath>\t<depth_relpath>

Annotations: JSON array, one record per frame::

    {"frame": int, "bbox": {"h": int, "w": int},
     "joints": [{"part": str, "x": float, "y": float}, ...]}

Pose output: JSON array, one record per frame::

    {"frame": int, "skeleton": "reduced10"|"full14", "score": float,
     "joints": [{"part": str, "x": float, "y": float, "z": float|null,
                 "type": int, "score": float}, ...]}

The "z" key is present only for 3-D poses; null marks a joint with no valid
depth neighborhood.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator, Sequence

import cv2
import numpy as np

from .errors import DataError
from .skeleton import SkeletonDef, skeleton_by_kind, skeleton_for_part_names
from .types import (
    AnnotationSet,
    BBox,
    FrameAnnotation,
    Joint,
    Joint3d,
    Pose,
    Pose3d,
    RgbdFrame,
)

DEFAULT_MANIFEST = "manifest.txt"


def read_manifest(directory: str | Path, manifest_name: str = DEFAULT_MANIFEST) -> list[tuple[Path, Path]]:
    directory = Path(directory)
    manifest = directory / manifest_name
    if not manifest.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    pairs = []
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise DataError(f"{manifest}:{lineno}: expected '<rgb>\\t<depth>', got {line!r}")
        pairs.append((directory / fields[0], directory / fields[1]))
    return pairs


def _read_rgb(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"rgb file not found: {path}")
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise DataError(f"could not decode rgb image: {path}")
    return img


def _read_depth(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"depth file not found: {path}")
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DataError(f"could not decode depth image: {path}")
    if img.ndim != 2:
        raise DataError(f"depth image must be single channel: {path} has shape {img.shape}")
    return img.astype(np.uint16)


def load_sequence(directory: str | Path, manifest_name: str = DEFAULT_MANIFEST) -> Iterator[RgbdFrame]:
    """Yield frames in manifest order, indexed 0..n-1."""
    for index, (rgb_path, depth_path) in enumerate(read_manifest(directory, manifest_name)):
        rgb = _read_rgb(rgb_path)
        depth = _read_depth(depth_path)
        if rgb.shape[:2] != depth.shape:
            raise DataError(
                f"frame {index}: rgb size {rgb.shape[:2]} != depth size {depth.shape} "
                f"({rgb_path.name} / {depth_path.name})"
            )
        yield RgbdFrame(rgb=rgb, depth=depth, index=index)


def write_frame(directory: str | Path, stem: str, frame: RgbdFrame) -> tuple[str, str]:
    """Write one frame as <stem>_rgb.png / <stem>_depth.png; returns relpaths."""
    directory = Path(directory)
    rgb_rel, depth_rel = f"{stem}_rgb.png", f"{stem}_depth.png"
    if not cv2.imwrite(str(directory / rgb_rel), frame.rgb):
        raise IOError(f"could not write {directory / rgb_rel}")
    if not cv2.imwrite(str(directory / depth_rel), frame.depth):
        raise IOError(f"could not write {directory / depth_rel}")
    return rgb_rel, depth_rel


def write_manifest(directory: str | Path, pairs: Sequence[tuple[str, str]],
                   manifest_name: str = DEFAULT_MANIFEST) -> Path:
    path = Path(directory) / manifest_name
    path.write_text("".join(f"{r}\t{d}\n" for r, d in pairs), encoding="utf-8")
    return path


def load_annotations(file_path: str | Path, skeleton: SkeletonDef | None = None) -> AnnotationSet:
    """Parse an annotation file; the skeleton is inferred from part names unless given."""
    file_path = Path(file_path)
    if not file_path.is_file():
        raise FileNotFoundError(f"annotation file not found: {file_path}")
    try:
        records = json.loads(file_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{file_path}: not valid JSON: {e}") from e
    if not isinstance(records, list):
        raise DataError(f"{file_path}: top level must be a JSON array")
    if not records:
        return AnnotationSet(entries=(), skeleton_kind=(skeleton or skeleton_by_kind("full14")).kind)

    entries = []
    for rec in records:
        frame = rec.get("frame")
        try:
            joints_raw = rec["joints"]
            bbox = BBox(h=int(rec["bbox"]["h"]), w=int(rec["bbox"]["w"]))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"frame {frame}: malformed annotation record: {e}") from e
        names = [j.get("part") for j in joints_raw]
        if skeleton is None:
            try:
                skeleton = skeleton_for_part_names(names)
            except DataError as e:
                raise DataError(f"frame {frame}: {e}") from e
        if len(joints_raw) != skeleton.part_count:
            raise DataError(
                f"frame {frame}: {len(joints_raw)} joints but skeleton "
                f"{skeleton.kind} has {skeleton.part_count} parts"
            )
        joints = []
        for j in joints_raw:
            try:
                joints.append(Joint(part_id=skeleton.index(j["part"]),
                                    x=float(j["x"]), y=float(j["y"])))
            except (KeyError, TypeError, ValueError) as e:
                raise DataError(f"frame {frame}: malformed joint record: {e}") from e
        pose = Pose(joints=tuple(joints), skeleton_kind=skeleton.kind)
        entries.append(FrameAnnotation(frame=int(frame), bbox=bbox, pose=pose))
    return AnnotationSet(entries=tuple(entries), skeleton_kind=skeleton.kind)


def write_annotations(annotations: AnnotationSet, path: str | Path) -> None:
    sk = skeleton_by_kind(annotations.skeleton_kind)
    records = []
    for e in annotations:
        records.append({
            "frame": e.frame,
            "bbox": {"h": e.bbox.h, "w": e.bbox.w},
            "joints": [
                {"part": sk.names[j.part_id], "x": j.x, "y": j.y}
                for j in sorted(e.pose.joints, key=lambda j: j.part_id)
            ],
        })
    Path(path).write_text(json.dumps(records, indent=1), encoding="utf-8")


def _pose_record(frame: int, pose: Pose | Pose3d) -> dict:
    sk = pose.skeleton()
    joints = []
    for j in sorted(pose.joints, key=lambda j: j.part_id):
        rec = {"part": sk.names[j.part_id], "x": j.x, "y": j.y}
        if isinstance(j, Joint3d):
            rec["z"] = j.z
            rec["type"] = 0
            rec["score"] = 0.0
        else:
            rec["type"] = j.type_id
            rec["score"] = j.score
        joints.append(rec)
    return {
        "frame": frame,
        "skeleton": pose.skeleton_kind,
        "score": pose.total_score,
        "joints": joints,
    }


def write_pose_json(poses: Sequence[tuple[int, Pose | Pose3d]], path: str | Path) -> None:
    """Write per-frame poses; `poses` is a sequence of (frame_index, pose)."""
    records = [_pose_record(frame, pose) for frame, pose in poses]
    try:
        Path(path).write_text(json.dumps(records, indent=1), encoding="utf-8")
    except OSError as e:
        raise IOError(f"could not write pose file {path}: {e}") from e


def read_pose_json(path: str | Path) -> list[tuple[int, Pose | Pose3d]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"pose file not found: {path}")
    try:
        records = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: not valid JSON: {e}") from e
    out = []
    for rec in records:
        sk = skeleton_by_kind(rec["skeleton"])
        has_z = any("z" in j for j in rec["joints"])
        joints = []
        for j in rec["joints"]:
            pid = sk.index(j["part"])
            if has_z:
                joints.append(Joint3d(part_id=pid, x=float(j["x"]), y=float(j["y"]),
                                      z=None if j.get("z") is None else float(j["z"])))
            else:
                joints.append(Joint(part_id=pid, x=float(j["x"]), y=float(j["y"]),
                                    type_id=int(j.get("type", 0)),
                                    score=float(j.get("score", 0.0))))
        cls = Pose3d if has_z else Pose
        out.append((int(rec["frame"]),
                    cls(joints=tuple(joints), skeleton_kind=sk.kind,
                        total_score=float(rec.get("score", 0.0)))))
    return out
