"""Limb kinematic chains: forward kinematics, closed-form inverse kinematics,
and completion of the reduced pose (elbows/knees recovered from shoulder/hand
and hip/foot pairs).

Chain convention
----------------
Each limb is a six-revolute chain anchored at the proximal joint (shoulder or
hip).  Frames follow the classic per-row transform

    Rz(theta) Tz(d) Tx(a) Rx(alpha)

with the joint variable added to the row's theta offset.  The rows are laid
out so that

* the frame-3 origin sits at the elbow/knee (distance a2 from the base),
* the end effector (frame 6) sits at the hand/foot (distance a3 from the
  elbow), its position a function of q1..q3 only, and
* q4..q6 form a spherical wrist controlling orientation only.

The base frame of a limb is built from the torso: its z axis points from the
neck toward the hip midpoint, its x axis is the body's lateral direction
(left shoulder minus right shoulder) made orthogonal to z, and y completes
the right-handed frame.  For a fronto-parallel figure the x-z plane is the
image plane, so both in-plane elbow solutions are reachable and are selected
by the branch sign.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ReachabilityError, WristSingularityError
from .skeleton import FULL14
from .types import Joint3d, Pose, Pose3d

log = logging.getLogger(__name__)

REACH_TOL = 1e-9


@dataclass(frozen=True)
class DhRow:
    """One chain row; theta acts as a constant offset when the row is variable."""

    theta: float
    d: float
    alpha: float
    a: float
    variable: bool = True

    def __post_init__(self):
        for name in ("theta", "d", "alpha", "a"):
            if not np.isfinite(getattr(self, name)):
                raise DataError(f"non-finite D-H parameter {name}")
        if self.a < 0:
            raise DataError(f"link length a must be >= 0, got {self.a}")


@dataclass(frozen=True)
class ChainSolution:
    q: tuple[float, float, float, float, float, float]
    branch: int  # +1 / -1 elbow configuration


@dataclass(frozen=True)
class KinematicChain:
    rows: tuple[DhRow, ...]
    base_frame: np.ndarray  # 4x4 rigid transform, world <- chain base
    a2: float
    a3: float

    def __post_init__(self):
        if len(self.rows) != 6:
            raise DataError(f"chain needs exactly 6 rows, got {len(self.rows)}")
        T = self.base_frame
        if T.shape != (4, 4):
            raise DataError("base_frame must be 4x4")
        R = T[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9):
            raise DataError("base_frame rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise DataError("base_frame rotation must have determinant +1")
        self.base_frame.setflags(write=False)


def dh_transform(row: DhRow, q: float = 0.0) -> np.ndarray:
    theta = row.theta + q if row.variable else row.theta
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(row.alpha), np.sin(row.alpha)
    return np.array([
        [ct, -ca * st, sa * st, row.a * ct],
        [st, ca * ct, -sa * ct, row.a * st],
        [0.0, sa, ca, row.d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def limb_chain(a2: float, a3: float, base_frame: np.ndarray | None = None) -> KinematicChain:
    """Standard limb chain with segment lengths a2 (proximal), a3 (distal)."""
    if a2 <= 0 or a3 <= 0:
        raise DataError(f"segment lengths must be positive, got a2={a2} a3={a3}")
    if base_frame is None:
        base_frame = np.eye(4)
    rows = (
        DhRow(theta=0.0, d=0.0, alpha=np.pi / 2, a=0.0),
        DhRow(theta=0.0, d=0.0, alpha=0.0, a=a2),
        DhRow(theta=-np.pi / 2, d=0.0, alpha=-np.pi / 2, a=0.0),
        DhRow(theta=0.0, d=a3, alpha=np.pi / 2, a=0.0),
        DhRow(theta=-np.pi, d=0.0, alpha=-np.pi / 2, a=0.0),
        DhRow(theta=np.pi / 2, d=0.0, alpha=0.0, a=0.0),
    )
    return KinematicChain(rows=rows, base_frame=base_frame, a2=a2, a3=a3)


def chain_frames(chain: KinematicChain, q) -> list[np.ndarray]:
    """Cumulative transforms [0T1, ..., 0T6] in chain-base coordinates."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (6,):
        raise DataError(f"expected 6 joint angles, got shape {q.shape}")
    frames = []
    T = np.eye(4)
    for row, qi in zip(chain.rows, q):
        T = T @ dh_transform(row, float(qi))
        frames.append(T)
    return frames


def forward_kinematics(chain: KinematicChain, q) -> np.ndarray:
    """End-effector transform 0T6 in chain-base coordinates."""
    return chain_frames(chain, q)[-1]


def ik_position(target, a2: float, a3: float, branch: int = 1,
                q1_fallback: float = 0.0) -> tuple[float, float, float]:
    """First three joints from the end-effector position (law of cosines).

    branch selects the elbow configuration (+1/-1).  Raises
    ReachabilityError outside [|a2 - a3|, a2 + a3] beyond tolerance.
    """
    x, y, z = (float(v) for v in target)
    dist = float(np.sqrt(x * x + y * y + z * z))
    lo, hi = abs(a2 - a3), a2 + a3
    if dist < lo - REACH_TOL or dist > hi + REACH_TOL:
        raise ReachabilityError(dist, lo, hi)
    r = np.hypot(x, y)
    q1 = np.arctan2(y, x) if r > 0 else q1_fallback
    cos_q3 = (dist * dist - a2 * a2 - a3 * a3) / (2.0 * a2 * a3)
    cos_q3 = min(1.0, max(-1.0, cos_q3))
    sin_q3 = branch * np.sqrt(max(0.0, 1.0 - cos_q3 * cos_q3))
    q3 = np.arctan2(sin_q3, cos_q3)
    phi = np.arctan2(a3 * sin_q3, a2 + a3 * cos_q3)
    q2 = np.arctan2(z, r) - phi
    return float(q1), float(q2), float(q3)


def ik_orientation(r06: np.ndarray, q1: float, q2: float, q3: float,
                   chain: KinematicChain) -> tuple[float, float, float]:
    """Wrist joints from the residual rotation between frame 3 and the target.

    Raises WristSingularityError when the wrist axes align (residual r33 at
    +-1), where q4 and q6 are not separable.
    """
    r06 = np.asarray(r06, dtype=np.float64)
    if r06.shape != (3, 3):
        raise DataError("r06 must be 3x3")
    if not np.allclose(r06 @ r06.T, np.eye(3), atol=1e-9):
        raise DataError("r06 is not orthonormal")
    r03 = np.eye(4)
    for row, qi in zip(chain.rows[:3], (q1, q2, q3)):
        r03 = r03 @ dh_transform(row, qi)
    m = r03[:3, :3].T @ r06
    if abs(abs(m[2, 2]) - 1.0) < 1e-9:
        raise WristSingularityError(
            f"wrist singular: residual r33 = {m[2, 2]:.12f}"
        )
    q4 = np.arctan2(m[1, 2], m[0, 2])
    q5 = np.arccos(np.clip(-m[2, 2], -1.0, 1.0))
    q6 = np.pi / 2 - np.arctan2(m[2, 1], m[2, 0])
    return float(q4), float(q5), float(q6)


def solve_position(chain: KinematicChain, target_world, branch: int = 1,
                   q1_fallback: float = 0.0) -> ChainSolution:
    """Position-only solution; wrist angles zeroed."""
    T = np.linalg.inv(chain.base_frame)
    local = T[:3, :3] @ np.asarray(target_world, dtype=np.float64) + T[:3, 3]
    q1, q2, q3 = ik_position(local, chain.a2, chain.a3, branch, q1_fallback)
    return ChainSolution(q=(q1, q2, q3, 0.0, 0.0, 0.0), branch=branch)


def elbow_position(chain: KinematicChain, solution: ChainSolution) -> np.ndarray:
    """World position of the intermediate (frame 3) origin."""
    frames = chain_frames(chain, solution.q)
    p = chain.base_frame @ frames[2][:, 3]
    return p[:3]


# ---------------------------------------------------------------------------
# pose completion

@dataclass(frozen=True)
class LimbLengths:
    """Segment lengths in the same unit as the completion coordinates."""

    arm_upper: float
    arm_lower: float
    leg_upper: float
    leg_lower: float

    def __post_init__(self):
        for name in ("arm_upper", "arm_lower", "leg_upper", "leg_lower"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")


_LIMBS = (
    # new joint, base joint, end joint, (upper, lower) length attrs
    ("l_elbow", "l_shoulder", "l_wrist", ("arm_upper", "arm_lower")),
    ("r_elbow", "r_shoulder", "r_wrist", ("arm_upper", "arm_lower")),
    ("l_knee", "l_hip", "l_ankle", ("leg_upper", "leg_lower")),
    ("r_knee", "r_hip", "r_ankle", ("leg_upper", "leg_lower")),
)

DEFAULT_BRANCHES = {"l_elbow": 1, "r_elbow": 1, "l_knee": 1, "r_knee": 1}


def torso_basis(neck: np.ndarray, hip_mid: np.ndarray, lateral: np.ndarray) -> np.ndarray:
    """Rotation whose z axis runs down the torso and x axis is lateral."""
    z0 = hip_mid - neck
    nz = np.linalg.norm(z0)
    if nz < 1e-12:
        raise DataError("degenerate torso: neck and hip midpoint coincide")
    z0 = z0 / nz
    x0 = lateral - (lateral @ z0) * z0
    nx = np.linalg.norm(x0)
    if nx < 1e-12:
        raise DataError("degenerate torso: lateral axis parallel to torso axis")
    x0 = x0 / nx
    y0 = np.cross(z0, x0)
    return np.column_stack([x0, y0, z0])


def _joint_xyz(pose: Pose3d, name: str, mm_per_px: float) -> np.ndarray | None:
    j = pose.joint(pose.skeleton().index(name))
    if j.z is None:
        return None
    return np.array([j.x * mm_per_px, j.y * mm_per_px, j.z], dtype=np.float64)


def complete_skeleton(reduced: Pose3d, lengths: LimbLengths,
                      mm_per_px: float = 1.0,
                      branches: dict[str, int] | None = None,
                      previous: Pose3d | None = None) -> Pose3d:
    """Insert elbows and knees into a reduced pose via per-limb inverse
    kinematics.

    Coordinates are solved in millimeters: x/y are scaled by mm_per_px, z is
    used as stored.  Input joints are carried over untouched.  Out-of-reach
    targets are clamped to the reach boundary with a warning; limbs with a
    missing depth fall back to the 2-D segment midpoint.  When `previous` is
    given, each limb picks the branch whose solution lands closest to the
    previous frame's inserted joint; otherwise `branches` (or the defaults)
    decide.
    """
    if reduced.skeleton_kind != "reduced10":
        raise DataError(f"completion expects a reduced10 pose, got {reduced.skeleton_kind}")
    branches = {**DEFAULT_BRANCHES, **(branches or {})}

    neck = _joint_xyz(reduced, "neck", mm_per_px)
    lhip = _joint_xyz(reduced, "l_hip", mm_per_px)
    rhip = _joint_xyz(reduced, "r_hip", mm_per_px)
    lsho = _joint_xyz(reduced, "l_shoulder", mm_per_px)
    rsho = _joint_xyz(reduced, "r_shoulder", mm_per_px)
    basis = None
    if all(v is not None for v in (neck, lhip, rhip, lsho, rsho)):
        try:
            basis = torso_basis(neck, 0.5 * (lhip + rhip), lsho - rsho)
        except DataError as e:
            log.warning("torso frame construction failed: %s", e)

    new_joints: dict[str, Joint3d] = {}
    full_idx = {name: i for i, name in enumerate(FULL14.names)}
    for limb, base_name, end_name, (upper_attr, lower_attr) in _LIMBS:
        a2 = getattr(lengths, upper_attr)
        a3 = getattr(lengths, lower_attr)
        base = _joint_xyz(reduced, base_name, mm_per_px)
        end = _joint_xyz(reduced, end_name, mm_per_px)
        if base is None or end is None or basis is None:
            bj = reduced.joint(reduced.skeleton().index(base_name))
            ej = reduced.joint(reduced.skeleton().index(end_name))
            log.warning("limb %s lacks depth; placing %s at the 2-D midpoint",
                        base_name, limb)
            new_joints[limb] = Joint3d(part_id=full_idx[limb],
                                       x=0.5 * (bj.x + ej.x),
                                       y=0.5 * (bj.y + ej.y), z=None)
            continue

        frame = np.eye(4)
        frame[:3, :3] = basis
        frame[:3, 3] = base
        chain = limb_chain(a2, a3, frame)

        target = end.copy()
        span = np.linalg.norm(target - base)
        lo, hi = abs(a2 - a3), a2 + a3
        if span > hi or (0 < span < lo):
            clamped = np.clip(span, lo, hi)
            log.warning("limb %s span %.3f outside reach [%.3f, %.3f]; clamping",
                        limb, span, lo, hi)
            target = base + (target - base) * (clamped / span)

        sigma = branches[limb]
        if previous is not None:
            prev_j = previous.joint(full_idx[limb])
            if prev_j.z is not None:
                prev = np.array([prev_j.x * mm_per_px, prev_j.y * mm_per_px, prev_j.z])
                best = None
                for cand in (1, -1):
                    p = elbow_position(chain, solve_position(chain, target, cand))
                    d = np.linalg.norm(p - prev)
                    if best is None or d < best[0]:
                        best = (d, cand)
                sigma = best[1]
        solution = solve_position(chain, target, sigma)
        p = elbow_position(chain, solution)
        new_joints[limb] = Joint3d(part_id=full_idx[limb],
                                   x=float(p[0] / mm_per_px),
                                   y=float(p[1] / mm_per_px), z=float(p[2]))

    joints = []
    red_sk = reduced.skeleton()
    for name in FULL14.names:
        if name in new_joints:
            joints.append(new_joints[name])
        else:
            j = reduced.joint(red_sk.index(name))
            joints.append(Joint3d(part_id=full_idx[name], x=j.x, y=j.y, z=j.z))
    return Pose3d(joints=tuple(joints), skeleton_kind="full14",
                  total_score=reduced.total_score)


# ---------------------------------------------------------------------------
# depth lookup and limb length estimation

def lift_to_3d(pose: Pose, depth: np.ndarray, window: int = 2) -> Pose3d:
    """Median depth in a (2*window+1)^2 neighborhood of each joint; joints
    over invalid depth get z=None."""
    h, w = depth.shape
    joints = []
    for j in sorted(pose.joints, key=lambda j: j.part_id):
        x = int(np.clip(round(j.x), 0, w - 1))
        y = int(np.clip(round(j.y), 0, h - 1))
        patch = depth[max(0, y - window): y + window + 1,
                      max(0, x - window): x + window + 1]
        vals = patch[patch > 0]
        z = float(np.median(vals)) if vals.size else None
        joints.append(Joint3d(part_id=j.part_id, x=j.x, y=j.y, z=z))
    return Pose3d(joints=tuple(joints), skeleton_kind=pose.skeleton_kind,
                  total_score=pose.total_score)


def estimate_limb_lengths(poses: list[Pose3d], mm_per_px: float = 1.0,
                          upper_fraction: float = 0.48) -> LimbLengths:
    """Per-sequence segment lengths: the 90th percentile of observed
    shoulder-wrist (hip-ankle) span, split into upper/lower segments."""
    arm, leg = [], []
    for pose in poses:
        for base_name, end_name, store in (("l_shoulder", "l_wrist", arm),
                                           ("r_shoulder", "r_wrist", arm),
                                           ("l_hip", "l_ankle", leg),
                                           ("r_hip", "r_ankle", leg)):
            b = _joint_xyz(pose, base_name, mm_per_px)
            e = _joint_xyz(pose, end_name, mm_per_px)
            if b is not None and e is not None:
                store.append(float(np.linalg.norm(e - b)))
    if not arm or not leg:
        raise DataError("no usable limb observations to estimate lengths")
    arm_span = float(np.percentile(arm, 90))
    leg_span = float(np.percentile(leg, 90))
    return LimbLengths(
        arm_upper=arm_span * upper_fraction,
        arm_lower=arm_span * (1.0 - upper_fraction),
        leg_upper=leg_span * upper_fraction,
        leg_lower=leg_span * (1.0 - upper_fraction),
    )
