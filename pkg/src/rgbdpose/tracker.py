"""Skeleton-coupled Kalman filtering of joint tracks across frames.

Each tracked joint carries a six-dimensional state [x y vx vy ax ay].  The
block transition matrix stacks one integrator block per joint on the
diagonal; a coupling block at (i, j) subtracts joint j's velocity from joint
i's position rows and j's acceleration from i's velocity rows, encoding that
paired joints move relative to each other.  Only positions are observed.

Per frame the filter predicts, updates on the detector's joint positions,
and the final output is arbitrated between the filter estimate and the
previous frame's output: whichever lies closer to the current detection
wins.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

STATE_DIM = 6


def joint_measurement_block() -> np.ndarray:
    h1 = np.zeros((STATE_DIM, STATE_DIM))
    h1[0, 0] = 1.0
    h1[1, 1] = 1.0
    return h1


def joint_transition_block() -> np.ndarray:
    """Position rows integrate velocity; velocity rows integrate acceleration."""
    a1 = np.eye(STATE_DIM)
    a1[0, 2] = 1.0
    a1[1, 3] = 1.0
    a1[2, 4] = 1.0
    a1[3, 5] = 1.0
    return a1


def coupling_block(coupling: float = -1.0) -> np.ndarray:
    """Partner influence: velocity into position rows, acceleration into
    velocity rows, scaled by the coupling constant."""
    a2 = np.zeros((STATE_DIM, STATE_DIM))
    a2[0, 2] = coupling
    a2[1, 3] = coupling
    a2[2, 4] = coupling
    a2[3, 5] = coupling
    return a2


def build_measurement_matrix(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"joint count must be >= 1, got {n}")
    h = np.zeros((STATE_DIM * n, STATE_DIM * n))
    h1 = joint_measurement_block()
    for i in range(n):
        s = i * STATE_DIM
        h[s:s + STATE_DIM, s:s + STATE_DIM] = h1
    return h


def build_transition_matrix(n: int, pairing, coupling: float = -1.0) -> np.ndarray:
    if n < 1:
        raise ValueError(f"joint count must be >= 1, got {n}")
    a = np.zeros((STATE_DIM * n, STATE_DIM * n))
    a1 = joint_transition_block()
    a2 = coupling_block(coupling)
    for i in range(n):
        s = i * STATE_DIM
        a[s:s + STATE_DIM, s:s + STATE_DIM] = a1
    for i, j in pairing:
        if i == j:
            raise ValueError(f"self-pair ({i},{j}) not allowed")
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"pair ({i},{j}) out of range for {n} joints")
        a[i * STATE_DIM:(i + 1) * STATE_DIM, j * STATE_DIM:(j + 1) * STATE_DIM] = a2
    return a


@dataclass(frozen=True)
class TrackState:
    x: np.ndarray  # (6n,) stacked joint states
    P: np.ndarray  # (6n, 6n) covariance
    A: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    pairing: tuple[tuple[int, int], ...]

    def __post_init__(self):
        n = self.x.size
        for name in ("P", "A", "H", "Q", "R"):
            m = getattr(self, name)
            if m.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}, got {m.shape}")

    @property
    def joint_count(self) -> int:
        return self.x.size // STATE_DIM

    def positions(self) -> np.ndarray:
        """(n, 2) joint positions read out of the state."""
        return self.x.reshape(-1, STATE_DIM)[:, :2].copy()


def make_track_state(
    positions: np.ndarray,
    pairing=(),
    coupling: float = -1.0,
    q_scale: float = 1.0,
    r_scale: float = 4.0,
    p0_scale: float = 10.0,
) -> TrackState:
    """Fresh track at the given (n, 2) joint positions, zero velocity."""
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    x = np.zeros(STATE_DIM * n)
    x[0::STATE_DIM] = positions[:, 0]
    x[1::STATE_DIM] = positions[:, 1]
    r = np.zeros((STATE_DIM * n, STATE_DIM * n))
    for i in range(n):
        s = i * STATE_DIM
        r[s, s] = r_scale
        r[s + 1, s + 1] = r_scale
    return TrackState(
        x=x,
        P=np.eye(STATE_DIM * n) * p0_scale,
        A=build_transition_matrix(n, pairing, coupling),
        H=build_measurement_matrix(n),
        Q=np.eye(STATE_DIM * n) * q_scale,
        R=r,
        pairing=tuple(tuple(p) for p in pairing),
    )


def kf_predict(state: TrackState) -> TrackState:
    x = state.A @ state.x
    p = state.A @ state.P @ state.A.T + state.Q
    p = 0.5 * (p + p.T)
    return replace(state, x=x, P=p)


def kf_update(state: TrackState, z: np.ndarray) -> TrackState:
    """Measurement update; z is the (6n,) vector with position rows filled.

    Joints with non-finite position entries are treated as missing: their
    innovation is ignored and their state rows keep the prediction.  The
    covariance uses the Joseph form, which stays positive semidefinite for
    the modified gain.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != state.x.shape:
        raise ValueError(f"measurement shape {z.shape} != state shape {state.x.shape}")
    n = state.joint_count
    dim = state.x.size

    innov = z - state.H @ state.x
    obs = np.zeros(dim, dtype=bool)
    obs[0::STATE_DIM] = True
    obs[1::STATE_DIM] = True
    missing_dims = obs & ~np.isfinite(z)
    innov[~np.isfinite(innov)] = 0.0

    s = state.H @ state.P @ state.H.T + state.R
    try:
        k = np.linalg.solve(s.T, (state.P @ state.H.T).T).T
        if not np.isfinite(k).all():
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        k = state.P @ state.H.T @ np.linalg.pinv(s)

    if missing_dims.any():
        joint_missing = missing_dims.reshape(n, STATE_DIM)[:, :2].any(axis=1)
        for i in np.nonzero(joint_missing)[0]:
            k[i * STATE_DIM:(i + 1) * STATE_DIM, :] = 0.0
        k[:, missing_dims] = 0.0

    x = state.x + k @ innov
    ikh = np.eye(dim) - k @ state.H
    p = ikh @ state.P @ ikh.T + k @ state.R @ k.T
    p = 0.5 * (p + p.T)
    return replace(state, x=x, P=p)


def measurement_projection(state: TrackState) -> np.ndarray:
    """Position read-out H x as an (n, 2) array."""
    proj = state.H @ state.x
    return proj.reshape(-1, STATE_DIM)[:, :2].copy()


def select_solution(detector_best: np.ndarray, kf_estimate: np.ndarray,
                    previous: np.ndarray) -> tuple[np.ndarray, str]:
    """Pick the filter estimate or the previous output, whichever lies
    closer to the current detection; ties go to the filter."""
    b = np.asarray(detector_best, dtype=np.float64)
    k = np.asarray(kf_estimate, dtype=np.float64)
    p = np.asarray(previous, dtype=np.float64)
    if b.shape != k.shape or b.shape != p.shape:
        raise ValueError(
            f"shape mismatch: detection {b.shape}, filter {k.shape}, previous {p.shape}"
        )
    eps1 = float(np.linalg.norm((b - k).ravel()))
    eps2 = float(np.linalg.norm((b - p).ravel()))
    if eps1 <= eps2:
        return k.copy(), "filter"
    return p.copy(), "previous"


def default_pairing(skeleton) -> tuple[tuple[int, int], ...]:
    """Couple each end effector to its proximal limb joint when both exist."""
    pairs = []
    for end, prox in (("l_wrist", "l_shoulder"), ("r_wrist", "r_shoulder"),
                      ("l_ankle", "l_hip"), ("r_ankle", "r_hip")):
        try:
            pairs.append((skeleton.index(end), skeleton.index(prox)))
        except KeyError:
            continue
    return tuple(pairs)


@dataclass
class FrameDiagnostics:
    frame: int
    innovation_norm: float
    eps_filter: float
    eps_previous: float
    chosen: str


class PoseTracker:
    """Sequential fold over detections for one tracked person.

    feed() takes the detector's best (n, 2) joint positions for the next
    frame (rows may be NaN for missing joints) and returns the arbitrated
    output positions.
    """

    def __init__(self, pairing=(), coupling: float = -1.0, q_scale: float = 1.0,
                 r_scale: float = 4.0, p0_scale: float = 10.0):
        self._kwargs = dict(pairing=pairing, coupling=coupling,
                            q_scale=q_scale, r_scale=r_scale, p0_scale=p0_scale)
        self.state: TrackState | None = None
        self.previous: np.ndarray | None = None
        self.diagnostics: list[FrameDiagnostics] = []
        self._frame = 0

    def feed(self, detected: np.ndarray) -> np.ndarray:
        detected = np.asarray(detected, dtype=np.float64)
        frame = self._frame
        self._frame += 1
        if self.state is None:
            init = np.where(np.isfinite(detected), detected, 0.0)
            self.state = make_track_state(init, **self._kwargs)
            self.previous = init.copy()
            self.diagnostics.append(FrameDiagnostics(frame, 0.0, 0.0, 0.0, "detector"))
            return init.copy()

        self.state = kf_predict(self.state)
        z = np.full(self.state.x.size, np.nan)
        z[0::STATE_DIM] = detected[:, 0]
        z[1::STATE_DIM] = detected[:, 1]
        innov = np.nan_to_num(z - self.state.H @ self.state.x, nan=0.0)
        self.state = kf_update(self.state, np.where(np.isfinite(z), z, np.nan))
        estimate = measurement_projection(self.state)

        safe_detected = np.where(np.isfinite(detected), detected, estimate)
        chosen, which = select_solution(safe_detected, estimate, self.previous)
        eps1 = float(np.linalg.norm((safe_detected - estimate).ravel()))
        eps2 = float(np.linalg.norm((safe_detected - self.previous).ravel()))
        self.diagnostics.append(FrameDiagnostics(
            frame, float(np.linalg.norm(innov)), eps1, eps2, which))
        self.previous = chosen.copy()
        return chosen.copy()
