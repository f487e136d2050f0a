"""Spring maximization for message passing.

Computes, over a score grid f, the quantity

    out[p] = max_c  f[c] + w1 * (c - p) + w2 * (c - p)^2

separably along each axis, together with the argmax locations.  Two engines:

* "envelope": the linear-time lower-envelope transform.  The linear term is
  folded into a query shift, since w1*d + w2*d^2 = w2*(d + w1/(2*w2))^2
  - w1^2/(4*w2).  Requires strictly concave springs (w2 < 0).
* "exhaustive": dense evaluation of all (c, p) pairs; works for any weights.

Engine "auto" picks the envelope when both quadratic weights are strictly
negative, otherwise the exhaustive path.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is an optional accelerator
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

# floor applied to scores before the envelope pass so -inf point masses
# cannot poison the parabola intersections
_SCORE_FLOOR = -1e30


def _max_1d_exhaustive(f: np.ndarray, w1: float, w2: float) -> tuple[np.ndarray, np.ndarray]:
    """Rows of f transformed independently; returns (values, argmax) (R, n)."""
    n = f.shape[1]
    c = np.arange(n, dtype=np.float64)
    d = c[:, None] - c[None, :]  # d[c, p] = c - p
    spring = w1 * d + w2 * d * d
    scored = f[:, :, None] + spring[None, :, :]  # (R, c, p)
    arg = np.argmax(scored, axis=1)
    val = np.take_along_axis(scored, arg[:, None, :], axis=1)[:, 0, :]
    return val, arg


@njit(cache=True)
def _envelope_kernel(f, g, lam, shift, w1, w2, val, arg):  # pragma: no cover - jitted
    rows, n = f.shape
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    for r in range(rows):
        k = 0
        v[0] = 0
        z[0] = -np.inf
        z[1] = np.inf
        for c in range(1, n):
            s = ((g[r, c] + lam * c * c) - (g[r, v[k]] + lam * v[k] * v[k])) / (
                2.0 * lam * (c - v[k])
            )
            while s <= z[k]:
                k -= 1
                s = ((g[r, c] + lam * c * c) - (g[r, v[k]] + lam * v[k] * v[k])) / (
                    2.0 * lam * (c - v[k])
                )
            k += 1
            v[k] = c
            z[k] = s
            z[k + 1] = np.inf
        k = 0
        for p in range(n):
            q = p + shift
            while z[k + 1] < q:
                k += 1
            best = v[k]
            arg[r, p] = best
            d = best - p
            val[r, p] = f[r, best] + w1 * d + w2 * d * d


def _max_1d_envelope(f: np.ndarray, w1: float, w2: float) -> tuple[np.ndarray, np.ndarray]:
    """Lower-envelope transform per row; w2 must be strictly negative."""
    rows, n = f.shape
    lam = -w2  # positive curvature of the minimization form
    shift = -w1 / (2.0 * w2)
    g = -np.maximum(f, _SCORE_FLOOR)  # minimize g(c) + lam * (c - q)^2
    val = np.empty_like(f)
    arg = np.empty((rows, n), dtype=np.int64)
    _envelope_kernel(np.ascontiguousarray(f), np.ascontiguousarray(g),
                     lam, shift, w1, w2, val, arg)
    return val, arg


def spring_max_1d(f: np.ndarray, w1: float, w2: float, engine: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    if engine == "auto":
        engine = "envelope" if w2 < 0 else "exhaustive"
    if engine == "envelope":
        if w2 >= 0:
            raise ValueError(
                f"envelope engine needs a strictly concave spring, got w2={w2}"
            )
        return _max_1d_envelope(f, w1, w2)
    if engine == "exhaustive":
        return _max_1d_exhaustive(f, w1, w2)
    raise ValueError(f"unknown engine {engine!r}")


def spring_max_2d(
    score: np.ndarray,
    wx: tuple[float, float],
    wy: tuple[float, float],
    engine: str = "auto",
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """out[py, px] = max over (cy, cx) of score[cy, cx] + spring_x + spring_y.

    Springs act on dx = cx - px and dy = cy - py.  Returns (values,
    arg_y, arg_x), each (H, W).
    """
    score = np.asarray(score, dtype=np.float64)
    if score.ndim != 2:
        raise ValueError(f"score grid must be 2-D, got shape {score.shape}")
    if engine == "envelope" and (wx[1] >= 0 or wy[1] >= 0):
        raise ValueError(
            f"envelope engine needs strictly concave springs, got "
            f"dx^2 weight {wx[1]} and dy^2 weight {wy[1]}"
        )
    if engine == "auto":
        engine = "envelope" if (wx[1] < 0 and wy[1] < 0) else "exhaustive"

    # pass along x (rows), then along y (columns of the row-transformed grid)
    vx, ax = spring_max_1d(score, wx[0], wx[1], engine)
    vy, ay = spring_max_1d(vx.T, wy[0], wy[1], engine)
    out = vy.T
    arg_y = ay.T
    arg_x = np.take_along_axis(ax, arg_y, axis=0)
    return out, arg_y, arg_x
