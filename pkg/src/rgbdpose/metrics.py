"""Keypoint evaluation: correct-keypoint rate, per-part average precision,
and mean pixel error.

A keypoint is correct when it lies within alpha * max(h, w) of the ground
truth, h/w taken from that frame's person bounding box.  Average precision
ranks detections by their pose score across all frames, matches greedily
(one detection per ground truth), and integrates the interpolated
precision-recall curve.  Mean error is computed over all keypoints, not
just correct ones.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .skeleton import skeleton_by_kind
from .types import AnnotationSet, Pose

REPORT_GROUPS = (
    ("Head", ("head",)),
    ("Shoulder", ("l_shoulder", "r_shoulder")),
    ("Wrist", ("l_wrist", "r_wrist")),
    ("Hip", ("l_hip", "r_hip")),
    ("Ankle", ("l_ankle", "r_ankle")),
)


def _check_frames(pred_frames, gt: AnnotationSet) -> None:
    missing = sorted(set(gt.frames()) - set(pred_frames))
    if missing:
        raise DataError(f"predictions missing for annotated frames: {missing}")


def _distances(predictions, gt: AnnotationSet):
    """Per part name: list of (distance, threshold_at_alpha1) across frames."""
    preds = dict(predictions)
    _check_frames(preds.keys(), gt)
    sk = skeleton_by_kind(gt.skeleton_kind)
    out = {name: [] for name in sk.names}
    for entry in gt:
        pose = preds[entry.frame]
        if pose.skeleton_kind != gt.skeleton_kind:
            raise DataError(
                f"frame {entry.frame}: prediction skeleton {pose.skeleton_kind} "
                f"!= annotation skeleton {gt.skeleton_kind}"
            )
        ref = float(max(entry.bbox.h, entry.bbox.w))
        for part_id, name in enumerate(sk.names):
            pj = pose.joint(part_id)
            gj = entry.pose.joint(part_id)
            dist = float(np.hypot(pj.x - gj.x, pj.y - gj.y))
            out[name].append((dist, ref))
    return out


def pck(predictions, gt: AnnotationSet, alpha: float) -> dict[str, float]:
    """Percent of correct keypoints per part, plus 'average' over parts.

    predictions: iterable of (frame, Pose), one pose per annotated frame.
    """
    if alpha < 0:
        raise DataError(f"alpha must be >= 0, got {alpha}")
    dists = _distances(predictions, gt)
    out = {}
    for name, rows in dists.items():
        correct = [d <= alpha * ref for d, ref in rows]
        out[name] = 100.0 * float(np.mean(correct)) if rows else 0.0
    out["average"] = float(np.mean([out[n] for n in dists]))
    return out


def mean_error(predictions, gt: AnnotationSet) -> dict[str, float]:
    """Mean Euclidean pixel distance per part, plus 'average' over parts."""
    dists = _distances(predictions, gt)
    out = {name: float(np.mean([d for d, _ in rows])) if rows else 0.0
           for name, rows in dists.items()}
    out["average"] = float(np.mean([out[n] for n in dists]))
    return out


def _average_precision(records: list[tuple[float, bool]], n_gt: int) -> float:
    """All-points interpolated AP from (score, is_true_positive) records."""
    if n_gt == 0:
        return 0.0
    if not records:
        return 0.0
    records = sorted(records, key=lambda r: -r[0])
    tp = np.cumsum([1.0 if ok else 0.0 for _, ok in records])
    fp = np.cumsum([0.0 if ok else 1.0 for _, ok in records])
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    # monotone precision envelope, integrated over recall increments
    ap = 0.0
    prev_r = 0.0
    for k in range(len(records)):
        envelope = precision[k:].max()
        if recall[k] > prev_r:
            ap += (recall[k] - prev_r) * envelope
            prev_r = recall[k]
    return float(ap)


def apk(detections, gt: AnnotationSet, alpha: float) -> dict[str, float]:
    """Average precision per part over score-ranked detections, plus 'average'.

    detections: iterable of (frame, [Pose, ...]) with scored candidate poses;
    ranking uses the pose total_score.  Each ground-truth keypoint can match
    at most one detection (greedy in score order).
    """
    if alpha < 0:
        raise DataError(f"alpha must be >= 0, got {alpha}")
    dets = dict(detections)
    _check_frames(dets.keys(), gt)
    sk = skeleton_by_kind(gt.skeleton_kind)
    by_frame = gt.by_frame()
    out = {}
    for part_id, name in enumerate(sk.names):
        records = []  # (score, frame, distance, threshold)
        for frame, poses in dets.items():
            if frame not in by_frame:
                continue
            entry = by_frame[frame]
            ref = float(max(entry.bbox.h, entry.bbox.w))
            gj = entry.pose.joint(part_id)
            for pose in poses:
                pj = pose.joint(part_id)
                dist = float(np.hypot(pj.x - gj.x, pj.y - gj.y))
                records.append((pose.total_score, frame, dist, ref))
        # equal scores rank by normalized distance, so tied correct
        # detections come first and a flat-score run reduces to the
        # correctness rate
        records.sort(key=lambda r: (-r[0], r[2] / r[3]))
        matched: set[int] = set()
        scored = []
        for score, frame, dist, ref in records:
            ok = dist <= alpha * ref and frame not in matched
            if ok:
                matched.add(frame)
            scored.append((score, ok))
        out[name] = 100.0 * _average_precision(scored, n_gt=len(gt))
    out["average"] = float(np.mean([out[n] for n in sk.names]))
    return out


@dataclass(frozen=True)
class EvalReport:
    alpha: float
    frame_count: int
    pck_by_part: dict[str, float]
    apk_by_part: dict[str, float]
    error_by_part: dict[str, float]

    def __post_init__(self):
        if self.frame_count <= 0:
            raise DataError("report needs at least one evaluated frame")

    def group_value(self, metric: dict[str, float], parts) -> float | None:
        vals = [metric[p] for p in parts if p in metric]
        return float(np.mean(vals)) if vals else None

    def table_rows(self) -> list[tuple[str, list[float | None]]]:
        rows = []
        for metric_name, metric in (("APK", self.apk_by_part),
                                    ("PCK", self.pck_by_part),
                                    ("Error", self.error_by_part)):
            cols = [self.group_value(metric, parts) for _, parts in REPORT_GROUPS]
            present = [c for c in cols if c is not None]
            cols.append(float(np.mean(present)) if present else None)
            rows.append((metric_name, cols))
        return rows

    def format_table(self) -> str:
        headers = [g for g, _ in REPORT_GROUPS] + ["Average"]
        lines = [
            f"alpha = {self.alpha}, frames = {self.frame_count}; "
            "error averaged over all keypoints (not only correct ones)",
            "{:<8}".format("Metric") + "".join(f"{h:>10}" for h in headers),
        ]
        for name, cols in self.table_rows():
            cells = "".join(
                f"{c:>10.2f}" if c is not None else f"{'-':>10}" for c in cols
            )
            lines.append(f"{name:<8}" + cells)
        return "\n".join(lines)

    def to_json(self) -> str:
        payload = {
            "alpha": self.alpha,
            "frames": self.frame_count,
            "per_part": {
                part: {
                    "pck": self.pck_by_part.get(part),
                    "apk": self.apk_by_part.get(part),
                    "error": self.error_by_part.get(part),
                }
                for part in self.pck_by_part
            },
            "table": {
                name: {
                    header: cols[i]
                    for i, header in enumerate([g for g, _ in REPORT_GROUPS] + ["Average"])
                }
                for name, cols in self.table_rows()
            },
        }
        return json.dumps(payload, indent=1, sort_keys=True)


def evaluate(predictions, detections, gt: AnnotationSet, alpha: float) -> EvalReport:
    """Full report; `predictions` carries one pose per frame for PCK/error,
    `detections` the scored candidate lists for APK (may be the same poses)."""
    return EvalReport(
        alpha=alpha,
        frame_count=len(gt),
        pck_by_part=pck(predictions, gt, alpha),
        apk_by_part=apk(detections, gt, alpha),
        error_by_part=mean_error(predictions, gt),
    )
