import numpy as np
import pytest

from rgbdpose.features import FeatureGrid
from rgbdpose.model import zero_model
from rgbdpose.skeleton import SkeletonDef, register_skeleton


def make_toy_skeleton(n_parts: int, rng: np.random.Generator) -> SkeletonDef:
    """Random tree over n_parts, registered so poses can reference it."""
    names = tuple(f"part{i}" for i in range(n_parts))
    edges = tuple((int(rng.integers(0, i)), i) for i in range(1, n_parts))
    sk = SkeletonDef(kind=f"toy{n_parts}_{rng.integers(1 << 30)}", names=names, edges=edges)
    return register_skeleton(sk)


def random_model(sk: SkeletonDef, type_count, filter_size: int, depth: int,
                 rng: np.random.Generator, concave: bool = True):
    """Random weights; spring curvature strictly negative when concave."""
    m = zero_model(sk, type_count, (filter_size, filter_size), depth,
                   cell_size=4, bin_count=1)
    for p in range(sk.part_count):
        m.filters_m[p] = rng.normal(0, 1, m.filters_m[p].shape)
        m.filters_d[p] = rng.normal(0, 1, m.filters_d[p].shape)
        m.bias_m[p] = rng.normal(0, 1, m.bias_m[p].shape)
        m.bias_d[p] = rng.normal(0, 1, m.bias_d[p].shape)
    for e in sk.edges:
        m.def_w_m[e] = rng.normal(0, 0.3, m.def_w_m[e].shape)
        m.def_w_d[e] = rng.normal(0, 0.3, m.def_w_d[e].shape)
        if concave:
            shape = m.def_w_m[e][..., [1, 3]].shape
            m.def_w_m[e][..., [1, 3]] = -rng.uniform(0.05, 1.0, shape)
            m.def_w_d[e][..., [1, 3]] = -rng.uniform(0.05, 1.0, shape)
        m.edge_bias_m[e] = rng.normal(0, 1, m.edge_bias_m[e].shape)
        m.edge_bias_d[e] = rng.normal(0, 1, m.edge_bias_d[e].shape)
    return m


def random_grid(rng: np.random.Generator, h: int, w: int, depth: int) -> FeatureGrid:
    return FeatureGrid(rng.normal(0, 1, (h, w, depth)), cell_size=4, bin_count=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
