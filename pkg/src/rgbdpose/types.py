"""Core domain types: frames, joints, poses, annotations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .skeleton import SkeletonDef, skeleton_by_kind


@dataclass(frozen=True)
class RgbdFrame:
    """A registered color/depth pair.

    rgb:   (H, W, 3) uint8
    depth: (H, W) uint16 millimeters, 0 marks an invalid reading
    index: position of the frame in its sequence
    """

    rgb: np.ndarray
    depth: np.ndarray
    index: int

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise DataError(f"rgb must be HxWx3, got shape {self.rgb.shape}")
        if self.depth.ndim != 2:
            raise DataError(f"depth must be HxW, got shape {self.depth.shape}")
        if self.rgb.shape[:2] != self.depth.shape:
            raise DataError(
                f"rgb size {self.rgb.shape[:2]} != depth size {self.depth.shape}"
            )
        if self.rgb.shape[0] < 1 or self.rgb.shape[1] < 1:
            raise DataError("empty raster")
        if self.index < 0:
            raise DataError("frame index must be non-negative")
        self.rgb.setflags(write=False)
        self.depth.setflags(write=False)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True)
class Joint:
    part_id: int
    x: float
    y: float
    type_id: int = 0
    score: float = 0.0


@dataclass(frozen=True)
class Pose:
    """One joint per part of the active skeleton, plus the pose-level score."""

    joints: tuple[Joint, ...]
    skeleton_kind: str
    total_score: float = 0.0

    def __post_init__(self):
        sk = self.skeleton()
        ids = sorted(j.part_id for j in self.joints)
        if ids != list(range(sk.part_count)):
            raise DataError(
                f"{self.skeleton_kind} pose needs exactly one joint per part, "
                f"got part ids {ids}"
            )

    def skeleton(self) -> SkeletonDef:
        return skeleton_by_kind(self.skeleton_kind)

    def joint(self, part_id: int) -> Joint:
        for j in self.joints:
            if j.part_id == part_id:
                return j
        raise KeyError(part_id)

    def positions(self) -> np.ndarray:
        """(P, 2) array of (x, y) ordered by part id."""
        out = np.empty((len(self.joints), 2), dtype=np.float64)
        for j in self.joints:
            out[j.part_id] = (j.x, j.y)
        return out

    def with_positions(self, xy: np.ndarray) -> "Pose":
        joints = tuple(
            Joint(j.part_id, float(xy[j.part_id, 0]), float(xy[j.part_id, 1]),
                  j.type_id, j.score)
            for j in self.joints
        )
        return Pose(joints, self.skeleton_kind, self.total_score)


@dataclass(frozen=True)
class Joint3d:
    part_id: int
    x: float
    y: float
    z: float | None  # millimeters; None when no valid depth was available


@dataclass(frozen=True)
class Pose3d:
    joints: tuple[Joint3d, ...]
    skeleton_kind: str
    total_score: float = 0.0

    def __post_init__(self):
        sk = skeleton_by_kind(self.skeleton_kind)
        ids = sorted(j.part_id for j in self.joints)
        if ids != list(range(sk.part_count)):
            raise DataError(f"{self.skeleton_kind} pose3d needs one joint per part")

    def skeleton(self) -> SkeletonDef:
        return skeleton_by_kind(self.skeleton_kind)

    def joint(self, part_id: int) -> Joint3d:
        for j in self.joints:
            if j.part_id == part_id:
                return j
        raise KeyError(part_id)


@dataclass(frozen=True)
class BBox:
    h: int
    w: int

    def __post_init__(self):
        if self.h <= 0 or self.w <= 0:
            raise DataError(f"bbox sides must be positive, got h={self.h} w={self.w}")


@dataclass(frozen=True)
class FrameAnnotation:
    frame: int
    bbox: BBox
    pose: Pose


@dataclass(frozen=True)
class AnnotationSet:
    entries: tuple[FrameAnnotation, ...]
    skeleton_kind: str = "full14"

    def __post_init__(self):
        last = -1
        for e in self.entries:
            if e.frame <= last:
                raise DataError("annotation frame indices must be strictly increasing")
            last = e.frame

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def frames(self) -> list[int]:
        return [e.frame for e in self.entries]

    def by_frame(self) -> dict[int, FrameAnnotation]:
        return {e.frame: e for e in self.entries}
