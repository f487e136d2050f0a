"""Dual-channel mixture-of-parts model: scoring, tree DP inference, persistence.

A pose configuration assigns each part a grid cell and a mixture type.  Its
score sums, over parts, the two appearance terms (color and depth filter
responses plus biases) and, over tree edges, the two spring terms (shared
displacement features weighted per channel) plus co-occurrence biases.
Inference maximizes the score by leaves-to-root message passing; messages
are spring maximizations over the child score grid, one per type pair.

Filters live on the feature-grid lattice; a part's location is the cell
under the filter center, reported in pixels at the cell center.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError
from .features import FeatureGrid
from .skeleton import SkeletonDef, skeleton_by_kind
from .springs import spring_max_2d
from .types import Joint, Pose

MODEL_MAGIC = b"4DDPM"
MODEL_VERSION = 1


def deformation_feature(xi: tuple[float, float], xj: tuple[float, float]) -> np.ndarray:
    """[dx, dx^2, dy, dy^2] for displacement xi - xj."""
    dx = xi[0] - xj[0]
    dy = xi[1] - xj[1]
    return np.array([dx, dx * dx, dy, dy * dy], dtype=np.float64)


@dataclass
class PartsModel:
    """Per-part filters/biases for both channels and per-edge spring weights.

    filters_*[p] has shape (T_p, fh, fw, D); bias_*[p] shape (T_p,).
    Edge arrays are keyed by (parent, child) as listed in the skeleton and
    indexed [t_child, t_parent]: def_w_* shape (Tc, Tp, 4), edge_bias_*
    shape (Tc, Tp).
    """

    skeleton: SkeletonDef
    cell_size: int
    bin_count: int
    type_counts: tuple[int, ...]
    filters_m: list[np.ndarray]
    filters_d: list[np.ndarray]
    bias_m: list[np.ndarray]
    bias_d: list[np.ndarray]
    def_w_m: dict[tuple[int, int], np.ndarray]
    def_w_d: dict[tuple[int, int], np.ndarray]
    edge_bias_m: dict[tuple[int, int], np.ndarray]
    edge_bias_d: dict[tuple[int, int], np.ndarray]

    @property
    def part_count(self) -> int:
        return self.skeleton.part_count

    @property
    def filter_shape(self) -> tuple[int, int]:
        return self.filters_m[0].shape[1:3]

    @property
    def feature_depth(self) -> int:
        return self.filters_m[0].shape[3]

    def spring_weights(self, edge: tuple[int, int], tc: int, tp: int) -> np.ndarray:
        """Channel-summed 4-vector [wx1, wx2, wy1, wy2] for one type pair."""
        return self.def_w_m[edge][tc, tp] + self.def_w_d[edge][tc, tp]

    def quadratic_weights_nonpositive(self, tol: float = 0.0) -> bool:
        for edge in self.skeleton.edges:
            for w in (self.def_w_m[edge], self.def_w_d[edge]):
                if (w[..., [1, 3]] > tol).any():
                    return False
        return True


def zero_model(
    skeleton: SkeletonDef,
    type_counts,
    filter_shape: tuple[int, int],
    feature_depth: int,
    cell_size: int = 8,
    bin_count: int = 9,
) -> PartsModel:
    if isinstance(type_counts, int):
        counts = tuple(1 if p == skeleton.root else type_counts
                       for p in range(skeleton.part_count))
    else:
        counts = tuple(int(t) for t in type_counts)
    fh, fw = filter_shape
    filters_m = [np.zeros((t, fh, fw, feature_depth)) for t in counts]
    filters_d = [np.zeros((t, fh, fw, feature_depth)) for t in counts]
    bias_m = [np.zeros(t) for t in counts]
    bias_d = [np.zeros(t) for t in counts]
    def_w_m, def_w_d, eb_m, eb_d = {}, {}, {}, {}
    for parent, child in skeleton.edges:
        tc, tp = counts[child], counts[parent]
        def_w_m[(parent, child)] = np.zeros((tc, tp, 4))
        def_w_d[(parent, child)] = np.zeros((tc, tp, 4))
        eb_m[(parent, child)] = np.zeros((tc, tp))
        eb_d[(parent, child)] = np.zeros((tc, tp))
    return PartsModel(
        skeleton=skeleton, cell_size=cell_size, bin_count=bin_count,
        type_counts=counts, filters_m=filters_m, filters_d=filters_d,
        bias_m=bias_m, bias_d=bias_d, def_w_m=def_w_m, def_w_d=def_w_d,
        edge_bias_m=eb_m, edge_bias_d=eb_d,
    )


def _correlate_same(cells: np.ndarray, filters: np.ndarray) -> np.ndarray:
    """(T, fh, fw, D) filter stack cross-correlated over (H, W, D) cells."""
    fh, fw = filters.shape[1:3]
    cy, cx = fh // 2, fw // 2
    padded = np.pad(cells, ((cy, fh - 1 - cy), (cx, fw - 1 - cx), (0, 0)))
    windows = sliding_window_view(padded, (fh, fw), axis=(0, 1))
    return np.einsum("yxduv,tuvd->tyx", windows, filters, optimize=True)


def score_part_appearance(model: PartsModel, part: int, type_id: int,
                          fm: FeatureGrid, fd: FeatureGrid) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel appearance grids: filter response plus channel bias."""
    _check_grids(model, fm, fd)
    gm = _correlate_same(fm.cells, model.filters_m[part][type_id:type_id + 1])[0]
    gd = _correlate_same(fd.cells, model.filters_d[part][type_id:type_id + 1])[0]
    return gm + model.bias_m[part][type_id], gd + model.bias_d[part][type_id]


def local_score(model: PartsModel, part: int, type_id: int, fm: FeatureGrid,
                fd: FeatureGrid, child_messages: dict[int, np.ndarray]) -> np.ndarray:
    """Appearance of both channels plus incoming child messages for one type."""
    kids = model.skeleton.children(part)
    missing = [k for k in kids if k not in child_messages]
    if missing:
        raise ValueError(f"part {part}: missing messages from children {missing}")
    gm, gd = score_part_appearance(model, part, type_id, fm, fd)
    total = gm + gd
    for k in kids:
        total = total + child_messages[k]
    return total


def pass_message(model: PartsModel, edge: tuple[int, int], t_parent: int,
                 child_scores: np.ndarray, engine: str = "auto"):
    """Message from the edge's child to its parent for one parent type.

    child_scores: (T_child, H, W) score grids.  Returns (message (H, W),
    backtrack) where backtrack holds int arrays 'type', 'y', 'x' giving the
    maximizing child assignment per parent cell.
    """
    parent, child = edge
    tc_count = model.type_counts[child]
    if child_scores.shape[0] != tc_count:
        raise ValueError(
            f"edge {edge}: expected {tc_count} child score grids, "
            f"got {child_scores.shape[0]}"
        )
    h, w = child_scores.shape[1:]
    best = np.full((h, w), -np.inf)
    bt_t = np.zeros((h, w), dtype=np.int16)
    bt_y = np.zeros((h, w), dtype=np.int32)
    bt_x = np.zeros((h, w), dtype=np.int32)
    for tc in range(tc_count):
        wsum = model.spring_weights(edge, tc, t_parent)
        bias = (model.edge_bias_m[edge][tc, t_parent]
                + model.edge_bias_d[edge][tc, t_parent])
        out, ay, ax = spring_max_2d(
            child_scores[tc], (wsum[0], wsum[1]), (wsum[2], wsum[3]), engine
        )
        out = out + bias
        better = out > best
        best = np.where(better, out, best)
        bt_t[better] = tc
        bt_y[better] = ay[better]
        bt_x[better] = ax[better]
    return best, {"type": bt_t, "y": bt_y, "x": bt_x}


@dataclass
class ScoreMaps:
    """All per-part score grids plus backtrack tables from one inference."""

    part_scores: dict[int, np.ndarray]            # part -> (T, H, W) local scores
    appearance: dict[int, np.ndarray]             # part -> (T, H, W) appearance only
    backtracks: dict[int, dict[int, dict]]        # child -> t_parent -> tables
    grid_shape: tuple[int, int]


def _check_grids(model: PartsModel, fm: FeatureGrid, fd: FeatureGrid) -> None:
    if fm.grid_shape != fd.grid_shape:
        raise DataError(
            f"channel grids disagree: {fm.grid_shape} vs {fd.grid_shape}"
        )
    fh, fw = model.filter_shape
    h, w = fm.grid_shape
    if h < fh or w < fw:
        raise DataError(
            f"feature grid {h}x{w} smaller than filter footprint {fh}x{fw}"
        )
    if fm.depth != model.feature_depth or fd.depth != model.feature_depth:
        raise DataError(
            f"feature depth {fm.depth}/{fd.depth} != model depth {model.feature_depth}"
        )


def compute_score_maps(model: PartsModel, fm: FeatureGrid, fd: FeatureGrid,
                       engine: str = "auto") -> ScoreMaps:
    """Leaves-to-root dynamic program over the part tree."""
    _check_grids(model, fm, fd)
    sk = model.skeleton
    h, w = fm.grid_shape
    appearance: dict[int, np.ndarray] = {}
    part_scores: dict[int, np.ndarray] = {}
    backtracks: dict[int, dict[int, dict]] = {}

    for part in reversed(sk.topo_order()):
        t_count = model.type_counts[part]
        app_m = _correlate_same(fm.cells, model.filters_m[part])
        app_d = _correlate_same(fd.cells, model.filters_d[part])
        app = (app_m + model.bias_m[part][:, None, None]
               + app_d + model.bias_d[part][:, None, None])
        appearance[part] = app
        total = app.copy()
        for child in sk.children(part):
            edge = (part, child)
            backtracks[child] = {}
            for tp in range(t_count):
                msg, bt = pass_message(model, edge, tp, part_scores[child], engine)
                total[tp] += msg
                backtracks[child][tp] = bt
        part_scores[part] = total
    return ScoreMaps(part_scores=part_scores, appearance=appearance,
                     backtracks=backtracks, grid_shape=(h, w))


def backtrack_pose(model: PartsModel, maps: ScoreMaps, root_type: int,
                   root_cell: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Cells (P, 2) as (y, x) and types (P,) for one root choice."""
    sk = model.skeleton
    cells = np.zeros((sk.part_count, 2), dtype=np.int64)
    types = np.zeros(sk.part_count, dtype=np.int64)
    types[sk.root] = root_type
    cells[sk.root] = root_cell
    for part in sk.topo_order():
        for child in sk.children(part):
            bt = maps.backtracks[child][types[part]]
            y, x = cells[part]
            types[child] = bt["type"][y, x]
            cells[child] = (bt["y"][y, x], bt["x"][y, x])
    return cells, types


def score_configuration(model: PartsModel, fm: FeatureGrid, fd: FeatureGrid,
                        cells: np.ndarray, types: np.ndarray) -> float:
    """Direct evaluation of the pose score for a fixed (cells, types) choice."""
    _check_grids(model, fm, fd)
    sk = model.skeleton
    fh, fw = model.filter_shape
    cy, cx = fh // 2, fw // 2
    total = 0.0
    for part in range(sk.part_count):
        t = int(types[part])
        y, x = int(cells[part, 0]), int(cells[part, 1])
        total += _patch_response(fm.cells, model.filters_m[part][t], y, x, cy, cx)
        total += model.bias_m[part][t]
        total += _patch_response(fd.cells, model.filters_d[part][t], y, x, cy, cx)
        total += model.bias_d[part][t]
    for parent, child in sk.edges:
        tp, tc = int(types[parent]), int(types[child])
        psi = deformation_feature(
            (cells[child, 1], cells[child, 0]), (cells[parent, 1], cells[parent, 0])
        )
        edge = (parent, child)
        total += float(model.def_w_m[edge][tc, tp] @ psi)
        total += float(model.def_w_d[edge][tc, tp] @ psi)
        total += model.edge_bias_m[edge][tc, tp] + model.edge_bias_d[edge][tc, tp]
    return float(total)


def _patch_response(cells: np.ndarray, filt: np.ndarray, y: int, x: int,
                    cy: int, cx: int) -> float:
    fh, fw, d = filt.shape
    h, w = cells.shape[:2]
    total = 0.0
    for u in range(fh):
        yy = y + u - cy
        if not 0 <= yy < h:
            continue
        for v in range(fw):
            xx = x + v - cx
            if not 0 <= xx < w:
                continue
            total += float(filt[u, v] @ cells[yy, xx])
    return total


def extract_patch(cells: np.ndarray, y: int, x: int, fh: int, fw: int) -> np.ndarray:
    """Zero-padded (fh, fw, D) feature window centered like the correlation."""
    cy, cx = fh // 2, fw // 2
    h, w, d = cells.shape
    out = np.zeros((fh, fw, d))
    for u in range(fh):
        yy = y + u - cy
        if not 0 <= yy < h:
            continue
        lo = max(0, cx - x)
        hi = min(fw, w - x + cx)
        if lo < hi:
            out[u, lo:hi] = cells[yy, x - cx + lo: x - cx + hi]
    return out


def _pose_bbox(cells: np.ndarray, cell_size: int) -> tuple[float, float, float, float]:
    xs = (cells[:, 1] + 0.5) * cell_size
    ys = (cells[:, 0] + 0.5) * cell_size
    pad = cell_size
    return xs.min() - pad, ys.min() - pad, xs.max() + pad, ys.max() + pad


def _iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def infer_from_features(
    model: PartsModel,
    fm: FeatureGrid,
    fd: FeatureGrid,
    threshold: float | None = None,
    top_k: int = 1,
    nms_iou: float = 0.3,
    engine: str = "auto",
    return_maps: bool = False,
):
    """Ranked poses above threshold after non-maximum suppression.

    The globally best pose is always returned, threshold notwithstanding, so
    a detection exists for every frame.
    """
    maps = compute_score_maps(model, fm, fd, engine)
    sk = model.skeleton
    root_scores = maps.part_scores[sk.root]
    order = np.argsort(root_scores.ravel(), kind="stable")[::-1]
    t_dim, h, w = root_scores.shape

    poses: list[Pose] = []
    kept_boxes: list[tuple[float, float, float, float]] = []
    limit = min(order.size, max(top_k * 16, 64))
    for rank in range(limit):
        flat = order[rank]
        score = float(root_scores.ravel()[flat])
        if poses and (threshold is not None and score < threshold):
            break
        t, rem = divmod(int(flat), h * w)
        y, x = divmod(rem, w)
        cells, types = backtrack_pose(model, maps, t, (y, x))
        box = _pose_bbox(cells, model.cell_size)
        if any(_iou(box, kb) > nms_iou for kb in kept_boxes):
            continue
        joints = tuple(
            Joint(
                part_id=p,
                x=float((cells[p, 1] + 0.5) * model.cell_size),
                y=float((cells[p, 0] + 0.5) * model.cell_size),
                type_id=int(types[p]),
                score=float(maps.appearance[p][types[p], cells[p, 0], cells[p, 1]]),
            )
            for p in range(sk.part_count)
        )
        poses.append(Pose(joints=joints, skeleton_kind=sk.kind, total_score=score))
        kept_boxes.append(box)
        if len(poses) >= top_k:
            break
    if return_maps:
        return poses, maps
    return poses


def best_score(model: PartsModel, fm: FeatureGrid, fd: FeatureGrid,
               engine: str = "auto") -> tuple[float, np.ndarray, np.ndarray]:
    """Best configuration score with its (cells, types); no NMS, no threshold."""
    maps = compute_score_maps(model, fm, fd, engine)
    root_scores = maps.part_scores[model.skeleton.root]
    flat = int(np.argmax(root_scores))
    t, rem = divmod(flat, root_scores.shape[1] * root_scores.shape[2])
    y, x = divmod(rem, root_scores.shape[2])
    cells, types = backtrack_pose(model, maps, t, (y, x))
    return float(root_scores[t, y, x]), cells, types


# ---------------------------------------------------------------------------
# persistence

def _array_entries(model: PartsModel):
    for p in range(model.part_count):
        yield f"part{p}/filter_m", model.filters_m[p]
        yield f"part{p}/filter_d", model.filters_d[p]
        yield f"part{p}/bias_m", model.bias_m[p]
        yield f"part{p}/bias_d", model.bias_d[p]
    for e, (parent, child) in enumerate(model.skeleton.edges):
        key = (parent, child)
        yield f"edge{e}/def_w_m", model.def_w_m[key]
        yield f"edge{e}/def_w_d", model.def_w_d[key]
        yield f"edge{e}/bias_m", model.edge_bias_m[key]
        yield f"edge{e}/bias_d", model.edge_bias_d[key]


def save_model(model: PartsModel, path) -> None:
    index = []
    blob = io.BytesIO()
    offset = 0
    for name, arr in _array_entries(model):
        data = np.ascontiguousarray(arr, dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob.write(data.tobytes())
        offset += data.size
    header = {
        "skeleton": {
            "kind": model.skeleton.kind,
            "names": list(model.skeleton.names),
            "edges": [list(e) for e in model.skeleton.edges],
        },
        "cell_size": model.cell_size,
        "bin_count": model.bin_count,
        "type_counts": list(model.type_counts),
        "arrays": index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(blob.getvalue())


def load_model(path) -> PartsModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise DataError(f"{path}: not a parts-model file (bad magic {magic!r})")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != MODEL_VERSION:
            raise DataError(
                f"{path}: unsupported model format version {version}, "
                f"expected {MODEL_VERSION}"
            )
        header = json.loads(fh.read(header_len).decode("utf-8"))
        raw = np.frombuffer(fh.read(), dtype="<f4")

    skeleton = skeleton_by_kind(header["skeleton"]["kind"])
    if list(skeleton.names) != header["skeleton"]["names"]:
        raise DataError(f"{path}: skeleton names do not match {skeleton.kind}")
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        arrays[entry["name"]] = (
            raw[entry["offset"]: entry["offset"] + size].astype(np.float64).reshape(shape)
        )
    counts = tuple(header["type_counts"])
    model = zero_model(
        skeleton, counts, tuple(arrays["part0/filter_m"].shape[1:3]),
        arrays["part0/filter_m"].shape[3], header["cell_size"], header["bin_count"],
    )
    for p in range(skeleton.part_count):
        model.filters_m[p] = arrays[f"part{p}/filter_m"]
        model.filters_d[p] = arrays[f"part{p}/filter_d"]
        model.bias_m[p] = arrays[f"part{p}/bias_m"]
        model.bias_d[p] = arrays[f"part{p}/bias_d"]
    for e, (parent, child) in enumerate(skeleton.edges):
        key = (parent, child)
        model.def_w_m[key] = arrays[f"edge{e}/def_w_m"]
        model.def_w_d[key] = arrays[f"edge{e}/def_w_d"]
        model.edge_bias_m[key] = arrays[f"edge{e}/bias_m"]
        model.edge_bias_d[key] = arrays[f"edge{e}/bias_d"]
    return model
