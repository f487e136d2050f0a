import itertools

import pytest

from rgbdpose.errors import DataError
from rgbdpose.skeleton import FULL14, REDUCED10, SkeletonDef, skeleton_for_part_names


def test_canonical_sizes():
    assert FULL14.part_count == 14
    assert len(FULL14.edges) == 13
    assert REDUCED10.part_count == 10
    assert len(REDUCED10.edges) == 9


def test_reduced_is_full_minus_elbows_and_knees():
    dropped = set(FULL14.names) - set(REDUCED10.names)
    assert dropped == {"l_elbow", "r_elbow", "l_knee", "r_knee"}


def test_roots_and_children():
    assert FULL14.root == 0
    assert FULL14.names[0] == "neck"
    assert set(FULL14.children(0)) == {FULL14.index(n) for n in
                                       ("head", "l_shoulder", "r_shoulder",
                                        "l_hip", "r_hip")}
    assert FULL14.parent_of(FULL14.index("l_wrist")) == FULL14.index("l_elbow")


def test_topo_order_root_first():
    order = FULL14.topo_order()
    assert order[0] == 0
    seen = set()
    for part in order:
        parent = FULL14.parent_of(part)
        assert parent is None or parent in seen
        seen.add(part)


def test_all_three_node_graphs():
    """Every (parent, child) edge list over 3 nodes: exactly the trees pass."""
    nodes = range(3)
    all_edges = [(a, b) for a in nodes for b in nodes]
    accepted = []
    for edges in itertools.combinations(all_edges, 2):
        try:
            SkeletonDef(kind="probe", names=("a", "b", "c"), edges=edges)
            accepted.append(edges)
        except DataError:
            pass
    # trees rooted at 0 over 3 labeled nodes: chains 0-1-2, 0-2-1 and star 0<(1,2)
    expected = {
        frozenset({(0, 1), (1, 2)}),
        frozenset({(0, 2), (2, 1)}),
        frozenset({(0, 1), (0, 2)}),
    }
    assert {frozenset(e) for e in accepted} == expected


@pytest.mark.parametrize("edges", [
    ((0, 1),),                      # too few edges
    ((0, 1), (1, 2), (2, 1)),       # too many
    ((0, 1), (1, 0)),               # root as child
    ((0, 1), (0, 1)),               # duplicate child
    ((0, 1), (3, 2)),               # index out of range
    ((1, 2), (2, 1)),               # cycle, disconnected from root
])
def test_rejects_non_trees(edges):
    with pytest.raises(DataError):
        SkeletonDef(kind="bad", names=("a", "b", "c"), edges=edges)


def test_skeleton_for_part_names():
    assert skeleton_for_part_names(FULL14.names) is FULL14
    assert skeleton_for_part_names(reversed(REDUCED10.names)) is REDUCED10
    with pytest.raises(DataError):
        skeleton_for_part_names(("head", "tail"))
