"""Depth-driven background removal via stable extremal regions.

The depth raster is quantized to a fixed number of levels and swept with
thresholds in both directions (components of {q <= t} and of {q >= t}).
A region's stability at level l is

    delta(l) = (|R(l + D)| - |R(l - D)|) / |R(l)|

where R(l') is the component of the same branch at threshold l' (empty below
the branch's first level; saturating at the top of the quantized range) and
D is the intensity step.  A branch is tracked by its seed pixel: the member
pixel with the lowest quantized value, ties broken by lowest linear index.
Regions kept are branch-local minima of delta that pass the area and
stability filters.

Background is then defined as every stable region whose area exceeds the
area threshold, plus all invalid (zero) depth pixels; those pixels are
zeroed in both channels and excluded from the foreground mask.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError
from .types import RgbdFrame

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class MserParams:
    """Stability-sweep parameters.

    max_area None means no upper cap (all valid pixels); area_threshold None
    defaults per image to 25% of the total pixel count.
    """

    delta: int = 2
    min_area: int = 50
    max_area: int | None = None
    area_threshold: int | None = None
    stability_cutoff: float = 0.5
    levels: int = 256

    def __post_init__(self):
        if self.delta < 1:
            raise DataError(f"delta must be >= 1, got {self.delta}")
        if self.min_area <= 0:
            raise DataError(f"min_area must be positive, got {self.min_area}")
        if self.max_area is not None and self.max_area <= self.min_area:
            raise DataError(
                f"need min_area < max_area, got {self.min_area} >= {self.max_area}"
            )
        if self.levels < 2:
            raise DataError("levels must be >= 2")
        if self.stability_cutoff < 0:
            raise DataError("stability_cutoff must be >= 0")


@dataclass(frozen=True)
class StableRegion:
    """One stable extremal region of the depth raster.

    indices: sorted flat pixel indices into the raster
    polarity: +1 for components of {q <= t}, -1 for {q >= t}
    level / seed / delta allow the defining threshold sweep to be replayed.
    """

    indices: np.ndarray
    shape: tuple[int, int]
    area: int
    stability: float
    representative: int
    polarity: int
    level: int
    seed: int
    delta: int

    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape[0] * self.shape[1], dtype=bool)
        m[self.indices] = True
        return m.reshape(self.shape)


def _quantize(depth: np.ndarray, valid: np.ndarray, levels: int) -> np.ndarray:
    """Linear quantization of valid depths to [0, levels); invalid pixels get -1."""
    q = np.full(depth.shape, -1, dtype=np.int32)
    if not valid.any():
        return q
    vals = depth[valid].astype(np.int64)
    lo, hi = int(vals.min()), int(vals.max())
    q[valid] = ((vals - lo) * levels) // (hi - lo + 1)
    return q


def _branch_nodes(q: np.ndarray, params: MserParams, polarity: int):
    """Component-tree sweep over one polarity.

    Returns (seed, level, area, delta_value) tuples for candidate nodes that
    are stability minima along their seed branch.
    """
    flat = q.ravel()
    valid = flat >= 0
    occ = np.unique(flat[valid]) if valid.any() else np.array([], dtype=np.int32)
    if occ.size == 0:
        return []

    # canonical pixel order: by (level, linear index); the seed of a component
    # is its first pixel in this order
    valid_idx = np.nonzero(valid)[0]
    order = valid_idx[np.lexsort((valid_idx, flat[valid_idx]))]

    seed_index: dict[int, int] = {}
    seeds: list[int] = []
    lev_used: list[int] = []
    samples: list[np.ndarray] = []  # per level: branch areas for seeds registered so far
    own_lev: list[np.ndarray] = []  # per level: seed slot + area per component
    own_sid: list[np.ndarray] = []
    own_area: list[np.ndarray] = []

    for lev in occ.tolist():
        mask = (q >= 0) & (q <= lev)
        lab, ncomp = ndimage.label(mask, structure=_CROSS)
        if ncomp == 0:
            continue
        lab_flat = lab.ravel()
        areas = np.bincount(lab_flat, minlength=ncomp + 1)
        in_order = lab_flat[order]
        comp_ids, first = np.unique(in_order, return_index=True)
        keep = comp_ids > 0
        comp_ids, first = comp_ids[keep], first[keep]
        level_seeds = order[first]
        for s in level_seeds.tolist():
            if s not in seed_index:
                seed_index[s] = len(seeds)
                seeds.append(s)
        sid = np.fromiter((seed_index[s] for s in level_seeds.tolist()),
                          dtype=np.int64, count=level_seeds.size)
        own_lev.append(np.full(sid.size, lev, dtype=np.int64))
        own_sid.append(sid)
        own_area.append(areas[comp_ids].astype(np.int64))
        # branch area for every registered seed (branches persist past merges)
        samples.append(areas[lab_flat[np.asarray(seeds, dtype=np.int64)]].astype(np.int64))
        lev_used.append(lev)

    n_lev, n_seeds = len(lev_used), len(seeds)
    lev_arr = np.asarray(lev_used, dtype=np.int64)
    # branch[k, p] = area of seed p's branch at level lev_arr[k]; 0 before birth
    branch = np.zeros((n_lev, n_seeds), dtype=np.int64)
    for k, vec in enumerate(samples):
        branch[k, : vec.size] = vec

    all_lev = np.concatenate(own_lev) if own_lev else np.empty(0, dtype=np.int64)
    all_sid = np.concatenate(own_sid) if own_sid else np.empty(0, dtype=np.int64)
    all_area = np.concatenate(own_area) if own_area else np.empty(0, dtype=np.int64)
    by_seed = np.argsort(all_sid, kind="stable")

    # a node is reported under the canonical seed of its component, so seeds
    # whose own branch never reaches min_area cannot contribute
    max_own = np.zeros(n_seeds, dtype=np.int64)
    np.maximum.at(max_own, all_sid, all_area)

    top = params.levels - 1
    delta = params.delta
    candidates = []
    start = 0
    sorted_sid = all_sid[by_seed]
    for p in range(n_seeds):
        stop = start
        while stop < sorted_sid.size and sorted_sid[stop] == p:
            stop += 1
        rows_idx = by_seed[start:stop]
        start = stop
        if rows_idx.size == 0 or max_own[p] < params.min_area:
            continue
        own_levels = all_lev[rows_idx]
        own_areas = all_area[rows_idx]

        def area_at(l: np.ndarray) -> np.ndarray:
            # step lookup on this seed's branch: largest recorded level <= l;
            # rows before the branch's birth already hold zero area
            pos = np.searchsorted(lev_arr, l, side="right") - 1
            return np.where(pos >= 0, branch[np.maximum(pos, 0), p], 0)

        # collapse own-branch rows into nodes (runs of equal area = same set)
        change = np.nonzero(np.diff(own_areas) != 0)[0]
        node_starts = np.concatenate(([0], change + 1))
        node_ends = np.concatenate((change, [own_areas.size - 1]))
        merged_at = _first_level_after(lev_arr, int(own_levels[-1]))

        node_deltas = []
        for a, b in zip(node_starts.tolist(), node_ends.tolist()):
            lo = int(own_levels[a])
            if b + 1 < own_areas.size:
                hi = int(own_levels[b + 1]) - 1
            else:
                hi = top if merged_at is None else merged_at - 1
            area = int(own_areas[a])
            ls = np.arange(lo, hi + 1, dtype=np.int64)
            a_hi = area_at(np.minimum(ls + delta, top))
            a_lo = area_at(ls - delta)
            dvals = (a_hi - a_lo) / float(area)
            j = int(np.argmin(dvals))
            node_deltas.append((area, float(dvals[j]), int(ls[j])))

        for k, (area, dval, at) in enumerate(node_deltas):
            prev_d = node_deltas[k - 1][1] if k > 0 else np.inf
            next_d = node_deltas[k + 1][1] if k + 1 < len(node_deltas) else np.inf
            if dval <= prev_d and dval <= next_d:
                candidates.append((seeds[p], at, area, dval))
    return candidates


def _first_level_after(levels_arr: np.ndarray, lev: int) -> int | None:
    pos = np.searchsorted(levels_arr, lev, side="right")
    if pos >= levels_arr.size:
        return None
    return int(levels_arr[pos])


def _extract(q: np.ndarray, seed: int, level: int) -> np.ndarray:
    mask = (q >= 0) & (q <= level)
    lab, _ = ndimage.label(mask, structure=_CROSS)
    cid = lab.ravel()[seed]
    return np.nonzero(lab.ravel() == cid)[0]


def detect_stable_regions(depth: np.ndarray, params: MserParams) -> list[StableRegion]:
    """Stable extremal regions of the depth raster, sorted by area descending.

    Both sweep directions are searched; invalid (zero) pixels never join a
    region.  An all-invalid raster yields an empty list.
    """
    if depth.ndim != 2 or depth.size == 0:
        raise DataError(f"depth must be a non-empty 2-D raster, got shape {depth.shape}")
    valid = depth > 0
    if not valid.any():
        return []
    max_area = params.max_area
    if max_area is None:
        max_area = int(valid.sum())

    shape = depth.shape
    regions: list[StableRegion] = []
    seen: set[bytes] = set()
    for polarity in (1, -1):
        q = _quantize(depth, valid, params.levels)
        if polarity == -1:
            q[q >= 0] = (params.levels - 1) - q[q >= 0]
        for seed, level, area, dval in _branch_nodes(q, params, polarity):
            if not (params.min_area <= area <= max_area):
                continue
            if dval > params.stability_cutoff:
                continue
            idx = _extract(q, seed, level)
            key = idx.tobytes()
            if key in seen:
                continue
            seen.add(key)
            rep = int(np.median(depth.ravel()[idx]))
            regions.append(StableRegion(
                indices=idx, shape=shape, area=int(idx.size), stability=dval,
                representative=rep, polarity=polarity, level=int(level),
                seed=int(seed), delta=params.delta,
            ))
    regions.sort(key=lambda r: (-r.area, r.polarity, r.seed))
    return regions


def remove_background(frame: RgbdFrame, params: MserParams) -> tuple[RgbdFrame, np.ndarray]:
    """Zero out stable large regions and invalid pixels in both channels.

    Returns the cleaned frame and the foreground mask (1 = retained pixel).
    """
    h, w = frame.depth.shape
    threshold = params.area_threshold
    if threshold is None:
        threshold = int(0.25 * h * w)

    background = frame.depth == 0
    valid_count = int((frame.depth > 0).sum())
    for region in detect_stable_regions(frame.depth, params):
        # the full valid set is "everything", not a background region
        if region.area == valid_count:
            continue
        if region.area > threshold:
            background |= region.mask()

    rgb = frame.rgb.copy()
    depth = frame.depth.copy()
    rgb[background] = 0
    depth[background] = 0
    mask = (~background).astype(np.uint8)
    return RgbdFrame(rgb=rgb, depth=depth, index=frame.index), mask
