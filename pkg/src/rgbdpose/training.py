"""Margin training for the parts model.

The model is linear in its weights, so a pose score can be written as a dot
product of a packed weight vector with a sparse configuration feature map.
Training minimizes

    0.5 * ||a||^2 + C * sum_n xi_n

where positives must score at least +1 at their annotated configuration and
person-free negatives must score at most -1 at *every* configuration, their
slack taken at the maximizing one (found by dense inference, i.e. hard
negative mining).  The solver is stochastic subgradient descent with the
quadratic spring weights projected to stay concave; the best iterate by true
objective is retained and returned.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .features import FeatureGrid
from .model import (
    PartsModel,
    best_score,
    deformation_feature,
    extract_patch,
    zero_model,
)
from .skeleton import SkeletonDef

log = logging.getLogger(__name__)

_QUAD_CEILING = -1e-3  # spring curvature stays at or below this after projection


@dataclass
class TrainConfig:
    C: float = 0.1
    epochs: int = 60
    learning_rate: float = 0.1
    tolerance: float = 1e-4
    patience: int = 15
    seed: int = 0
    type_count: int = 2
    filter_size: int = 3
    negative_cache: int = 400
    engine: str = "auto"

    def __post_init__(self):
        if self.C <= 0:
            raise ConfigError(f"C must be positive, got {self.C}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.type_count < 1:
            raise ConfigError("type_count must be >= 1")


@dataclass
class PositiveSample:
    fm: FeatureGrid
    fd: FeatureGrid
    cells: np.ndarray  # (P, 2) int grid cells as (y, x)
    types: np.ndarray | None = None  # filled by type assignment


@dataclass
class NegativeSample:
    fm: FeatureGrid
    fd: FeatureGrid


@dataclass
class TrainLog:
    objectives: list[float] = field(default_factory=list)  # best-so-far per epoch
    raw_objectives: list[float] = field(default_factory=list)
    converged: bool = False


# ---------------------------------------------------------------------------
# weight packing and configuration feature maps

def pack_weights(model: PartsModel) -> np.ndarray:
    chunks = []
    for p in range(model.part_count):
        chunks += [model.filters_m[p].ravel(), model.bias_m[p].ravel(),
                   model.filters_d[p].ravel(), model.bias_d[p].ravel()]
    for e in model.skeleton.edges:
        chunks += [model.def_w_m[e].ravel(), model.edge_bias_m[e].ravel(),
                   model.def_w_d[e].ravel(), model.edge_bias_d[e].ravel()]
    return np.concatenate(chunks)


def unpack_weights(alpha: np.ndarray, template: PartsModel) -> PartsModel:
    model = zero_model(template.skeleton, template.type_counts,
                       template.filter_shape, template.feature_depth,
                       template.cell_size, template.bin_count)
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        out = alpha[pos:pos + n].reshape(shape)
        pos += n
        return out.copy()

    for p in range(model.part_count):
        model.filters_m[p] = take(model.filters_m[p].shape)
        model.bias_m[p] = take(model.bias_m[p].shape)
        model.filters_d[p] = take(model.filters_d[p].shape)
        model.bias_d[p] = take(model.bias_d[p].shape)
    for e in model.skeleton.edges:
        model.def_w_m[e] = take(model.def_w_m[e].shape)
        model.edge_bias_m[e] = take(model.edge_bias_m[e].shape)
        model.def_w_d[e] = take(model.def_w_d[e].shape)
        model.edge_bias_d[e] = take(model.edge_bias_d[e].shape)
    if pos != alpha.size:
        raise ValueError(f"weight vector length {alpha.size} != model size {pos}")
    return model


def configuration_features(model: PartsModel, fm: FeatureGrid, fd: FeatureGrid,
                           cells: np.ndarray, types: np.ndarray) -> np.ndarray:
    """Phi such that pack_weights(model) . Phi == score_configuration."""
    fh, fw = model.filter_shape
    chunks = []
    for p in range(model.part_count):
        t = int(types[p])
        y, x = int(cells[p, 0]), int(cells[p, 1])
        patch_m = extract_patch(fm.cells, y, x, fh, fw)
        patch_d = extract_patch(fd.cells, y, x, fh, fw)
        t_count = model.type_counts[p]
        block_m = np.zeros((t_count, fh, fw, model.feature_depth))
        block_m[t] = patch_m
        bias_m = np.zeros(t_count)
        bias_m[t] = 1.0
        block_d = np.zeros((t_count, fh, fw, model.feature_depth))
        block_d[t] = patch_d
        bias_d = np.zeros(t_count)
        bias_d[t] = 1.0
        chunks += [block_m.ravel(), bias_m, block_d.ravel(), bias_d]
    for parent, child in model.skeleton.edges:
        tp, tc = int(types[parent]), int(types[child])
        psi = deformation_feature(
            (cells[child, 1], cells[child, 0]), (cells[parent, 1], cells[parent, 0])
        )
        e = (parent, child)
        wm = np.zeros(model.def_w_m[e].shape)
        wm[tc, tp] = psi
        bm = np.zeros(model.edge_bias_m[e].shape)
        bm[tc, tp] = 1.0
        wd = np.zeros(model.def_w_d[e].shape)
        wd[tc, tp] = psi
        bd = np.zeros(model.edge_bias_d[e].shape)
        bd[tc, tp] = 1.0
        chunks += [wm.ravel(), bm.ravel(), wd.ravel(), bd.ravel()]
    return np.concatenate(chunks)


# ---------------------------------------------------------------------------
# objective

def svm_objective(model: PartsModel, positives, negatives, C: float,
                  engine: str = "auto",
                  negative_scores: list[float] | None = None):
    """Regularized hinge objective and per-sample violations.

    negative_scores may carry precomputed per-negative maxima (from a mining
    pass) to avoid re-running inference; otherwise each negative is solved
    densely here.
    """
    alpha = pack_weights(model)
    pos_slack = []
    for s in positives:
        score = float(alpha @ configuration_features(model, s.fm, s.fd, s.cells, s.types))
        pos_slack.append(max(0.0, 1.0 - score))
    neg_slack = []
    for i, s in enumerate(negatives):
        if negative_scores is not None:
            smax = negative_scores[i]
        else:
            smax, _, _ = best_score(model, s.fm, s.fd, engine)
        neg_slack.append(max(0.0, 1.0 + smax))
    value = 0.5 * float(alpha @ alpha) + C * (sum(pos_slack) + sum(neg_slack))
    return value, {"positive_slack": pos_slack, "negative_slack": neg_slack}


# ---------------------------------------------------------------------------
# type assignment

def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
            iters: int = 25) -> np.ndarray:
    """Plain Lloyd iterations; returns per-point cluster labels."""
    n = points.shape[0]
    if k == 1 or n <= k:
        return np.arange(n) % k
    centers = points[rng.choice(n, size=k, replace=False)].astype(np.float64)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        d = ((points[:, None, :] - centers[None]) ** 2).sum(axis=2)
        labels = np.argmin(d, axis=1)
        for c in range(k):
            mask = labels == c
            if mask.any():
                centers[c] = points[mask].mean(axis=0)
            else:
                centers[c] = points[int(np.argmax(d.min(axis=1)))]
    return labels


def assign_types(skeleton: SkeletonDef, positives: list[PositiveSample],
                 type_count: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Cluster each part's parent-relative displacement; root keeps one type.

    Mutates each sample's `types`.  Returns the per-part type counts.
    """
    counts = [1] * skeleton.part_count
    n = len(positives)
    for s in positives:
        s.types = np.zeros(skeleton.part_count, dtype=np.int64)
    for parent, child in skeleton.edges:
        disp = np.array([
            s.cells[child].astype(np.float64) - s.cells[parent] for s in positives
        ])
        k = min(type_count, max(1, len({tuple(d) for d in disp.tolist()})))
        labels = _kmeans(disp, k, rng)
        counts[child] = k
        for s, lab in zip(positives, labels):
            s.types[child] = lab
    return tuple(counts)


# ---------------------------------------------------------------------------
# solver

def _project_concave(alpha: np.ndarray, template: PartsModel) -> None:
    """Clamp the quadratic spring entries so every message stays concave."""
    pos = 0
    for p in range(template.part_count):
        pos += (template.filters_m[p].size + template.bias_m[p].size
                + template.filters_d[p].size + template.bias_d[p].size)
    for e in template.skeleton.edges:
        for which in range(2):  # def_w_m then def_w_d (bias between them)
            w = alpha[pos:pos + template.def_w_m[e].size].reshape(template.def_w_m[e].shape)
            quad = w[..., [1, 3]]
            w[..., [1, 3]] = np.minimum(quad, _QUAD_CEILING)
            pos += w.size
            pos += template.edge_bias_m[e].size
    if pos != alpha.size:
        raise AssertionError("weight layout mismatch in concavity projection")


def _mean_displacement_init(model: PartsModel, positives) -> None:
    """Spring init: curvature -0.01, linear term centering each type cluster."""
    for parent, child in model.skeleton.edges:
        e = (parent, child)
        for tc in range(model.type_counts[child]):
            disp = np.array([
                s.cells[child] - s.cells[parent]
                for s in positives if s.types[child] == tc
            ])
            mu = disp.mean(axis=0) if disp.size else np.zeros(2)
            for w in (model.def_w_m[e], model.def_w_d[e]):
                w[tc, :, 1] = -0.01
                w[tc, :, 3] = -0.01
                w[tc, :, 0] = -2.0 * w[tc, :, 1] * mu[1]  # dx is the x offset
                w[tc, :, 2] = -2.0 * w[tc, :, 3] * mu[0]
    return None


def _matched_filter_init(model: PartsModel, positives) -> None:
    """Appearance warm start: each filter begins as the mean annotated patch,
    scaled for a unit response on a typical positive."""
    fh, fw = model.filter_shape
    for p in range(model.part_count):
        for t in range(model.type_counts[p]):
            patches_m, patches_d = [], []
            for s in positives:
                if int(s.types[p]) != t:
                    continue
                y, x = int(s.cells[p, 0]), int(s.cells[p, 1])
                patches_m.append(extract_patch(s.fm.cells, y, x, fh, fw))
                patches_d.append(extract_patch(s.fd.cells, y, x, fh, fw))
            if not patches_m:
                continue
            for filters, patches in ((model.filters_m[p], patches_m),
                                     (model.filters_d[p], patches_d)):
                mu = np.mean(patches, axis=0)
                scale = float((mu * mu).sum())
                if scale > 1e-9:
                    filters[t] = mu / scale


def train_toy(config: TrainConfig, skeleton: SkeletonDef,
              positives: list[PositiveSample], negatives: list[NegativeSample],
              progress=None) -> tuple[PartsModel, TrainLog]:
    """Desk-scale solver: subgradient steps plus per-epoch hard negative mining."""
    if not positives:
        raise ConfigError("training needs a non-empty positive set")
    rng = np.random.default_rng(config.seed)
    sample = positives[0]
    depth = sample.fm.depth
    counts = assign_types(skeleton, positives, config.type_count, rng)
    model = zero_model(skeleton, counts, (config.filter_size, config.filter_size),
                       depth, sample.fm.cell_size, sample.fm.bin_count)
    _mean_displacement_init(model, positives)
    _matched_filter_init(model, positives)

    pos_phi = np.stack([
        configuration_features(model, s.fm, s.fd, s.cells, s.types)
        for s in positives
    ])
    alpha = pack_weights(model)
    neg_phi: list[np.ndarray] = []
    grad_accum = np.zeros_like(alpha)

    log_out = TrainLog()
    best_alpha = alpha.copy()
    best_obj = np.inf
    stale = 0
    step = 0
    for epoch in range(config.epochs):
        current = unpack_weights(alpha, model)
        # mining pass doubles as the exact negative-slack evaluation
        neg_scores = []
        for s in negatives:
            smax, cells, types = best_score(current, s.fm, s.fd, config.engine)
            neg_scores.append(smax)
            if smax > -1.0:
                neg_phi.append(configuration_features(current, s.fm, s.fd, cells, types))
        if len(neg_phi) > config.negative_cache:
            neg_phi = neg_phi[-config.negative_cache:]

        obj, _ = svm_objective(current, positives, negatives, config.C,
                               config.engine, negative_scores=neg_scores)
        log_out.raw_objectives.append(obj)
        if obj < best_obj - config.tolerance:
            best_obj = obj
            best_alpha = alpha.copy()
            stale = 0
        else:
            stale += 1
        log_out.objectives.append(best_obj)
        if progress is not None:
            progress(epoch, best_obj, obj)
        if stale >= config.patience:
            log_out.converged = True
            break

        samples = [("pos", i) for i in range(len(positives))]
        samples += [("neg", i) for i in range(len(neg_phi))]
        rng.shuffle(samples)
        n_total = max(1, len(samples))
        for kind, i in samples:
            step += 1
            grad = alpha / n_total
            if kind == "pos":
                phi = pos_phi[i]
                if float(alpha @ phi) < 1.0:
                    grad = grad - config.C * phi
            else:
                phi = neg_phi[i]
                if float(alpha @ phi) > -1.0:
                    grad = grad + config.C * phi
            # adaptive per-coordinate steps tame the scale gap between
            # appearance entries (<= 1) and quadratic displacement entries
            grad_accum += grad * grad
            alpha -= config.learning_rate * grad / np.sqrt(grad_accum + 1e-12)
        _project_concave(alpha, model)

    if not log_out.converged:
        log.warning("training hit the epoch cap (%d) before converging; "
                    "returning the best iterate (objective %.6g)",
                    config.epochs, best_obj)
    final = unpack_weights(best_alpha, model)
    if not final.quadratic_weights_nonpositive(tol=1e-12):
        raise AssertionError("spring curvature escaped the concavity projection")
    return final, log_out
