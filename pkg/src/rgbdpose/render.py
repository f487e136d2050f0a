"""Overlay rendering: skeletons drawn over the RGB channel."""
from __future__ import annotations

import logging
from pathlib import Path

import cv2
import numpy as np

from .types import Pose, Pose3d, RgbdFrame

log = logging.getLogger(__name__)


def _part_color(part_id: int, part_count: int) -> tuple[int, int, int]:
    hue = int(179 * part_id / max(1, part_count))
    bgr = cv2.cvtColor(np.uint8([[[hue, 220, 255]]]), cv2.COLOR_HSV2BGR)[0, 0]
    return int(bgr[0]), int(bgr[1]), int(bgr[2])


def draw_pose(image: np.ndarray, pose: Pose | Pose3d) -> np.ndarray:
    """Skeleton edges and joints over a copy of the image; out-of-frame
    joints are clamped into view with a warning."""
    out = image.copy()
    h, w = out.shape[:2]
    sk = pose.skeleton()
    pts = {}
    for j in pose.joints:
        x, y = j.x, j.y
        if not (0 <= x < w and 0 <= y < h):
            log.warning("joint %s at (%.1f, %.1f) outside %dx%d frame; clamping",
                        sk.names[j.part_id], x, y, w, h)
            x = min(max(x, 0.0), w - 1.0)
            y = min(max(y, 0.0), h - 1.0)
        pts[j.part_id] = (int(round(x)), int(round(y)))
    for parent, child in sk.edges:
        cv2.line(out, pts[parent], pts[child],
                 _part_color(child, sk.part_count), 2, cv2.LINE_8)
    for part_id, pt in pts.items():
        cv2.circle(out, pt, 3, _part_color(part_id, sk.part_count), -1, cv2.LINE_8)
    return out


def render_overlays(frames: list[RgbdFrame], poses: dict[int, Pose | Pose3d],
                    out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for frame in frames:
        pose = poses.get(frame.index)
        if pose is None:
            continue
        img = draw_pose(frame.rgb, pose)
        path = out_dir / f"overlay{frame.index:05d}.png"
        cv2.imwrite(str(path), img)
        written.append(path)
    return written
