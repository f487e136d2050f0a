"""Synthetic stick-figure RGBD sequences with exact ground truth.

A planar figure (anti-aliased colored capsules over a dark noisy background
in RGB, a constant-depth silhouette over a far noisy background in depth)
follows a scripted joint-angle trajectory.  Ground truth is the rendered
joint centers; the person box is the tight joint bounding box padded 10%.
Optional per-frame joint jitter perturbs the figure (ground truth follows
it), and optional limb-colored distractor capsules at the figure's depth
make detection genuinely ambiguous for tracking experiments.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataio import write_annotations, write_frame, write_manifest
from .errors import DataError
from .skeleton import FULL14
from .types import AnnotationSet, BBox, FrameAnnotation, Joint, Pose, RgbdFrame

# color per bone group (BGR, as written to disk)
_BONE_COLORS = {
    "torso": (60, 200, 230),
    "head": (90, 220, 90),
    "shoulders": (200, 160, 60),
    "hips": (190, 90, 200),
    "l_arm_u": (60, 90, 230),
    "l_arm_l": (70, 150, 240),
    "r_arm_u": (230, 90, 60),
    "r_arm_l": (240, 150, 80),
    "l_leg_u": (80, 220, 200),
    "l_leg_l": (120, 230, 160),
    "r_leg_u": (220, 200, 70),
    "r_leg_l": (230, 160, 120),
}


@dataclass(frozen=True)
class MotionScript:
    """Per-frame joint-angle trajectories.

    kinds: "still", "wave" (sinusoidal arm swing), "walk" (alternating legs,
    counter-swinging arms), "reversal" (triangle-wave sweep whose direction
    flips abruptly at the peaks).
    """

    kind: str = "wave"
    amplitude_deg: float = 25.0
    period: int = 40
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("still", "wave", "walk", "reversal"):
            raise DataError(f"unknown motion script kind {self.kind!r}")
        if self.period < 2:
            raise DataError("script period must be >= 2 frames")


@dataclass(frozen=True)
class FigureSpec:
    image_w: int = 320
    image_h: int = 240
    center_x: float = 160.0
    center_y: float = 100.0
    px_per_mm: float = 0.08
    torso_mm: float = 480.0
    head_mm: float = 150.0
    shoulder_half_mm: float = 190.0
    hip_half_mm: float = 130.0
    arm_upper_mm: float = 350.0
    arm_lower_mm: float = 330.0
    leg_upper_mm: float = 420.0
    leg_lower_mm: float = 400.0
    plane_depth_mm: int = 2000
    background_depth_mm: int = 3500
    background_noise_mm: float = 40.0
    limb_thickness_px: float = 3.0
    joint_jitter_px: float = 0.0
    distractor_count: int = 0
    script: MotionScript = field(default_factory=MotionScript)

    def __post_init__(self):
        for name in ("torso_mm", "head_mm", "shoulder_half_mm", "hip_half_mm",
                     "arm_upper_mm", "arm_lower_mm", "leg_upper_mm", "leg_lower_mm"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")
        if not (500 <= self.plane_depth_mm <= 8000):
            raise DataError("figure plane depth must lie in the sensor range [500, 8000] mm")
        if self.background_depth_mm - self.plane_depth_mm < 1000:
            raise DataError("background must sit at least 1000 mm behind the figure")

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=1, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "FigureSpec":
        d = json.loads(text)
        script = MotionScript(**d.pop("script"))
        return FigureSpec(script=script, **d)


def _script_angles(script: MotionScript, t: int) -> dict[str, float]:
    """Limb angles (radians) at frame t; keys: {l,r}_{arm,leg}_{upper,bend}."""
    amp = np.deg2rad(script.amplitude_deg)
    tau = 2.0 * np.pi * (t / script.period) + script.phase
    base = {
        "l_arm_upper": np.deg2rad(24), "l_arm_bend": np.deg2rad(14),
        "r_arm_upper": np.deg2rad(-24), "r_arm_bend": np.deg2rad(-14),
        "l_leg_upper": np.deg2rad(9), "l_leg_bend": np.deg2rad(-7),
        "r_leg_upper": np.deg2rad(-9), "r_leg_bend": np.deg2rad(7),
    }
    if script.kind == "still":
        return base
    if script.kind == "wave":
        s = np.sin(tau)
        base["l_arm_upper"] += amp * s
        base["r_arm_upper"] -= amp * s
        base["l_arm_bend"] += 0.5 * amp * np.sin(tau + 0.7)
        base["r_arm_bend"] -= 0.5 * amp * np.sin(tau + 0.7)
        base["l_leg_upper"] += 0.15 * amp * s
        base["r_leg_upper"] -= 0.15 * amp * s
        return base
    if script.kind == "walk":
        s = np.sin(tau)
        base["l_leg_upper"] += amp * s
        base["r_leg_upper"] -= amp * s
        base["l_leg_bend"] -= 0.4 * amp * (1 + np.cos(tau))
        base["r_leg_bend"] += 0.4 * amp * (1 - np.cos(tau))
        base["l_arm_upper"] -= 0.6 * amp * s
        base["r_arm_upper"] += 0.6 * amp * s
        return base
    # reversal: triangle wave, slope flips sign at the extremes
    frac = (t / script.period + script.phase / (2 * np.pi)) % 1.0
    tri = 4.0 * abs(frac - 0.5) - 1.0
    base["l_arm_upper"] += amp * tri
    base["r_arm_upper"] -= amp * tri
    base["l_leg_upper"] += 0.3 * amp * tri
    base["r_leg_upper"] -= 0.3 * amp * tri
    return base


def figure_joints(spec: FigureSpec, t: int) -> dict[str, np.ndarray]:
    """Pixel positions of the 14 joints at frame t (no jitter)."""
    s = spec.px_per_mm
    c = np.array([spec.center_x, spec.center_y])
    down = np.array([0.0, 1.0])
    ang = _script_angles(spec.script, t)

    def ray(origin, angle, length_mm):
        # angle measured from straight down, positive toward +x
        d = np.array([np.sin(angle), np.cos(angle)])
        return origin + d * (length_mm * s)

    pelvis = c + down * (0.5 * spec.torso_mm * s)
    neck = c - down * (0.5 * spec.torso_mm * s)
    head = neck - down * (spec.head_mm * s)
    l_sh = neck + np.array([spec.shoulder_half_mm * s, 0.0])
    r_sh = neck - np.array([spec.shoulder_half_mm * s, 0.0])
    l_hip = pelvis + np.array([spec.hip_half_mm * s, 0.0])
    r_hip = pelvis - np.array([spec.hip_half_mm * s, 0.0])
    l_el = ray(l_sh, ang["l_arm_upper"], spec.arm_upper_mm)
    l_wr = ray(l_el, ang["l_arm_upper"] + ang["l_arm_bend"], spec.arm_lower_mm)
    r_el = ray(r_sh, ang["r_arm_upper"], spec.arm_upper_mm)
    r_wr = ray(r_el, ang["r_arm_upper"] + ang["r_arm_bend"], spec.arm_lower_mm)
    l_kn = ray(l_hip, ang["l_leg_upper"], spec.leg_upper_mm)
    l_an = ray(l_kn, ang["l_leg_upper"] + ang["l_leg_bend"], spec.leg_lower_mm)
    r_kn = ray(r_hip, ang["r_leg_upper"], spec.leg_upper_mm)
    r_an = ray(r_kn, ang["r_leg_upper"] + ang["r_leg_bend"], spec.leg_lower_mm)
    return {
        "neck": neck, "head": head,
        "l_shoulder": l_sh, "l_elbow": l_el, "l_wrist": l_wr,
        "r_shoulder": r_sh, "r_elbow": r_el, "r_wrist": r_wr,
        "l_hip": l_hip, "l_knee": l_kn, "l_ankle": l_an,
        "r_hip": r_hip, "r_knee": r_kn, "r_ankle": r_an,
        "pelvis": pelvis,
    }


def _bones(j: dict[str, np.ndarray]) -> list[tuple[str, np.ndarray, np.ndarray]]:
    return [
        ("torso", j["neck"], j["pelvis"]),
        ("head", j["neck"], j["head"]),
        ("shoulders", j["l_shoulder"], j["r_shoulder"]),
        ("hips", j["l_hip"], j["r_hip"]),
        ("l_arm_u", j["l_shoulder"], j["l_elbow"]),
        ("l_arm_l", j["l_elbow"], j["l_wrist"]),
        ("r_arm_u", j["r_shoulder"], j["r_elbow"]),
        ("r_arm_l", j["r_elbow"], j["r_wrist"]),
        ("l_leg_u", j["l_hip"], j["l_knee"]),
        ("l_leg_l", j["l_knee"], j["l_ankle"]),
        ("r_leg_u", j["r_hip"], j["r_knee"]),
        ("r_leg_l", j["r_knee"], j["r_ankle"]),
    ]


def _capsule_alpha(h: int, w: int, p: np.ndarray, q: np.ndarray, radius: float) -> tuple[slice, slice, np.ndarray]:
    """Anti-aliased coverage of the capsule from p to q within its bbox."""
    lo = np.floor(np.minimum(p, q) - radius - 1).astype(int)
    hi = np.ceil(np.maximum(p, q) + radius + 2).astype(int)
    x0, y0 = np.clip(lo[0], 0, w), np.clip(lo[1], 0, h)
    x1, y1 = np.clip(hi[0], 0, w), np.clip(hi[1], 0, h)
    if x0 >= x1 or y0 >= y1:
        return slice(0, 0), slice(0, 0), np.zeros((0, 0))
    ys, xs = np.mgrid[y0:y1, x0:x1]
    pts = np.stack([xs, ys], axis=-1).astype(np.float64)
    d = q - p
    denom = float(d @ d)
    if denom < 1e-12:
        dist = np.linalg.norm(pts - p, axis=-1)
    else:
        tt = np.clip(((pts - p) @ d) / denom, 0.0, 1.0)
        proj = p + tt[..., None] * d
        dist = np.linalg.norm(pts - proj, axis=-1)
    alpha = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    return slice(y0, y1), slice(x0, x1), alpha


def _paint(rgb: np.ndarray, silhouette: np.ndarray, bones, radius: float) -> None:
    for name, p, q in bones:
        ys, xs, alpha = _capsule_alpha(rgb.shape[0], rgb.shape[1], p, q, radius)
        if alpha.size == 0:
            continue
        color = np.array(_BONE_COLORS[name], dtype=np.float64)
        patch = rgb[ys, xs].astype(np.float64)
        rgb[ys, xs] = (patch * (1 - alpha[..., None])
                       + color[None, None] * alpha[..., None]).astype(np.uint8)
        silhouette[ys, xs] |= alpha >= 0.5


def render_frame(spec: FigureSpec, t: int, rng: np.random.Generator,
                 with_figure: bool = True) -> tuple[RgbdFrame, dict[str, np.ndarray] | None]:
    h, w = spec.image_h, spec.image_w
    rgb = rng.integers(0, 50, size=(h, w, 3)).astype(np.uint8)
    depth = np.clip(
        spec.background_depth_mm + rng.normal(0, spec.background_noise_mm, (h, w)),
        spec.plane_depth_mm + 1000, 65535,
    ).astype(np.uint16)

    silhouette = np.zeros((h, w), dtype=bool)
    joints = None
    if with_figure:
        joints = figure_joints(spec, t)
        if spec.joint_jitter_px > 0:
            for name in joints:
                joints[name] = joints[name] + rng.normal(0, spec.joint_jitter_px, 2)
        head_r = spec.head_mm * spec.px_per_mm * 0.45
        _paint(rgb, silhouette, _bones(joints), spec.limb_thickness_px)
        ys, xs, alpha = _capsule_alpha(h, w, joints["head"], joints["head"], head_r)
        if alpha.size:
            color = np.array(_BONE_COLORS["head"], dtype=np.float64)
            patch = rgb[ys, xs].astype(np.float64)
            rgb[ys, xs] = (patch * (1 - alpha[..., None])
                           + color[None, None] * alpha[..., None]).astype(np.uint8)
            silhouette[ys, xs] |= alpha >= 0.5

    names = list(_BONE_COLORS)
    for _ in range(spec.distractor_count):
        center = np.array([rng.uniform(10, w - 10), rng.uniform(10, h - 10)])
        angle = rng.uniform(0, 2 * np.pi)
        length = rng.uniform(18, 34)
        d = np.array([np.cos(angle), np.sin(angle)]) * (length / 2)
        dmask = np.zeros((h, w), dtype=bool)
        bone = [(names[int(rng.integers(0, len(names)))], center - d, center + d)]
        _paint(rgb, dmask, bone, spec.limb_thickness_px)
        silhouette |= dmask

    depth[silhouette] = spec.plane_depth_mm
    frame = RgbdFrame(rgb=rgb, depth=depth, index=t)
    if joints is not None:
        out_of_frame = [
            name for name, p in joints.items()
            if not (0 <= p[0] < w and 0 <= p[1] < h)
        ]
        if out_of_frame:
            raise DataError(f"frame {t}: figure joints out of frame: {out_of_frame}")
    return frame, joints


def _annotation(joints: dict[str, np.ndarray], frame: int) -> FrameAnnotation:
    pose = Pose(
        joints=tuple(
            Joint(part_id=i, x=float(joints[name][0]), y=float(joints[name][1]))
            for i, name in enumerate(FULL14.names)
        ),
        skeleton_kind="full14",
    )
    xs = np.array([joints[n][0] for n in FULL14.names])
    ys = np.array([joints[n][1] for n in FULL14.names])
    bh = (ys.max() - ys.min()) * 1.1
    bw = (xs.max() - xs.min()) * 1.1
    return FrameAnnotation(frame=frame, bbox=BBox(h=int(round(bh)), w=int(round(bw))),
                           pose=pose)


def render_sequence(spec: FigureSpec, frame_count: int, seed: int,
                    with_figure: bool = True) -> tuple[list[RgbdFrame], AnnotationSet]:
    """Deterministic sequence; annotations are empty when no figure is drawn."""
    if frame_count < 1:
        raise DataError(f"frame_count must be >= 1, got {frame_count}")
    rng = np.random.default_rng(seed)
    frames, entries = [], []
    for t in range(frame_count):
        frame, joints = render_frame(spec, t, rng, with_figure)
        frames.append(frame)
        if joints is not None:
            entries.append(_annotation(joints, t))
    return frames, AnnotationSet(entries=tuple(entries), skeleton_kind="full14")


def write_corpus(directory, spec: FigureSpec, frame_count: int, seed: int,
                 with_figure: bool = True) -> Path:
    """Render and store a sequence in the manifest/annotation formats."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames, annotations = render_sequence(spec, frame_count, seed, with_figure)
    pairs = [write_frame(directory, f"frame{f.index:05d}", f) for f in frames]
    write_manifest(directory, pairs)
    if with_figure:
        write_annotations(annotations, directory / "annotations.json")
    (directory / "figure_spec.json").write_text(spec.to_json(), encoding="utf-8")
    return directory
