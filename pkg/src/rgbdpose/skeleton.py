"""Skeleton definitions: the part tree wiring for the two canonical joint sets.

Both skeletons are rooted at the neck (part 0).  The 14-part skeleton is the
full body; the 10-part variant drops elbows and knees, which are recovered
later by limb inverse kinematics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DataError


@dataclass(frozen=True)
class SkeletonDef:
    """A part tree: names indexed by part id, edges as (parent, child) pairs."""

    kind: str
    names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    _children: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.names)
        if n < 1:
            raise DataError("skeleton needs at least one part")
        if len(self.edges) != n - 1:
            raise DataError(f"tree over {n} parts needs {n - 1} edges, got {len(self.edges)}")
        seen_child = set()
        kids: dict[int, list[int]] = {i: [] for i in range(n)}
        for parent, child in self.edges:
            if not (0 <= parent < n and 0 <= child < n):
                raise DataError(f"edge ({parent},{child}) out of range for {n} parts")
            if child == 0:
                raise DataError("part 0 is the root and cannot be a child")
            if child in seen_child:
                raise DataError(f"part {child} has two parents")
            seen_child.add(child)
            kids[parent].append(child)
        # every non-root part must be reachable from the root
        stack, reached = [0], {0}
        while stack:
            i = stack.pop()
            for c in kids[i]:
                reached.add(c)
                stack.append(c)
        if len(reached) != n:
            raise DataError("skeleton edges are disconnected or cyclic")
        object.__setattr__(self, "_children", kids)

    @property
    def part_count(self) -> int:
        return len(self.names)

    @property
    def root(self) -> int:
        return 0

    def children(self, part: int) -> list[int]:
        return list(self._children[part])

    def parent_of(self, part: int) -> int | None:
        for p, c in self.edges:
            if c == part:
                return p
        return None

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown part name {name!r}") from None

    def topo_order(self) -> list[int]:
        """Parts ordered root-first; reversed gives a leaves-to-root order."""
        order, stack = [], [0]
        while stack:
            i = stack.pop()
            order.append(i)
            stack.extend(self._children[i])
        return order


_FULL14_NAMES = (
    "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)

_REDUCED10_NAMES = (
    "neck", "head",
    "l_shoulder", "l_wrist",
    "r_shoulder", "r_wrist",
    "l_hip", "l_ankle",
    "r_hip", "r_ankle",
)

FULL14 = SkeletonDef(
    kind="full14",
    names=_FULL14_NAMES,
    edges=(
        (0, 1),
        (0, 2), (2, 3), (3, 4),
        (0, 5), (5, 6), (6, 7),
        (0, 8), (8, 9), (9, 10),
        (0, 11), (11, 12), (12, 13),
    ),
)

REDUCED10 = SkeletonDef(
    kind="reduced10",
    names=_REDUCED10_NAMES,
    edges=(
        (0, 1),
        (0, 2), (2, 3),
        (0, 4), (4, 5),
        (0, 6), (6, 7),
        (0, 8), (8, 9),
    ),
)

_BY_KIND = {"full14": FULL14, "reduced10": REDUCED10}


def register_skeleton(sk: SkeletonDef) -> SkeletonDef:
    """Make a non-canonical skeleton resolvable by kind (test rigs, toys)."""
    _BY_KIND[sk.kind] = sk
    return sk


def skeleton_by_kind(kind: str) -> SkeletonDef:
    try:
        return _BY_KIND[kind]
    except KeyError:
        raise DataError(f"unknown skeleton kind {kind!r}") from None


def skeleton_for_part_names(names) -> SkeletonDef:
    """Pick the canonical skeleton whose part-name set matches `names`."""
    nameset = set(names)
    for sk in (FULL14, REDUCED10):
        if nameset == set(sk.names):
            return sk
    raise DataError(f"part names match no canonical skeleton: {sorted(nameset)}")
