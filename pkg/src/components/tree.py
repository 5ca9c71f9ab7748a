"""
Fully local octree over the partition bounds, with tight per-cell boxes.

Cells live in flat arrays in breadth-first order: the root is cell 0 and the
children of every cell occupy a contiguous index range. Bodies are permuted
into key order so every cell owns a contiguous body range.
"""

import attrs
import numpy as np

from components.geometry import MAX_LEVEL, Bodies, Box, MortonKey, local_keys
from components.kernels import as_order, l2l_batch, l2p, m2m_batch, p2m
from utils.errors import ConfigurationError


def _column(dtype, shape=()):
    return attrs.field(
        converter=lambda value: np.asarray(value, dtype=dtype).reshape((-1,) + shape),
        eq=False,
    )


@attrs.define(eq=False)
class CellArrays:
    """Flat cell storage shared by local trees and LET fragments."""

    key: np.ndarray = _column(np.uint64)
    level: np.ndarray = _column(np.int64)
    parent: np.ndarray = _column(np.int64)
    child_index: np.ndarray = _column(np.int64)
    child_count: np.ndarray = _column(np.int64)
    body_index: np.ndarray = _column(np.int64)
    body_count: np.ndarray = _column(np.int64)
    geom_center: np.ndarray = _column(np.float64, (3,))
    geom_half: np.ndarray = _column(np.float64, (3,))
    box_min: np.ndarray = _column(np.float64, (3,))
    box_max: np.ndarray = _column(np.float64, (3,))
    multipole_only: np.ndarray = _column(bool)

    @classmethod
    def empty(cls):
        return cls(*([[]] * 12))

    def __len__(self):
        return len(self.key)

    @property
    def exp_center(self):
        return 0.5 * (self.box_min + self.box_max)

    @property
    def radius(self):
        return 0.5 * np.linalg.norm(self.box_max - self.box_min, axis=1)

    def is_leaf(self, c):
        return self.child_count[c] == 0

    def leaves(self):
        return np.flatnonzero(self.child_count == 0)


@attrs.frozen
class Cell:
    """Read-only snapshot of one cell."""

    key: MortonKey
    level: int
    child_index: int
    child_count: int
    body_index: int
    body_count: int
    geom_center: tuple
    octant_box: Box
    tight_box: Box
    exp_center: tuple
    radius: float
    M: np.ndarray = attrs.field(eq=False)
    L: np.ndarray = attrs.field(eq=False)

    @property
    def is_leaf(self):
        return self.child_count == 0


@attrs.frozen
class SourceView:
    """Read-only source side of a traversal: a whole tree or one LET fragment."""

    cells: CellArrays
    bodies: Bodies
    M: np.ndarray = attrs.field(eq=False)
    remote: bool = False
    rank: int = -1


@attrs.define(eq=False)
class Tree:
    """
    Local octree.

    ``M`` and ``L`` are allocated by :func:`upward_pass`; until then they are ``None``.
    """

    cells: CellArrays
    bodies: Bodies
    bounds: Box
    ncrit: int
    order: object = None
    M: np.ndarray = None
    L: np.ndarray = None

    @property
    def depth(self):
        return int(self.cells.level.max()) if len(self.cells) else 0

    def cell(self, c):
        cells = self.cells
        coeffs = self.order.coeff_count if self.order is not None else 0
        return Cell(
            key=MortonKey(int(cells.key[c]), int(cells.level[c])),
            level=int(cells.level[c]),
            child_index=int(cells.child_index[c]),
            child_count=int(cells.child_count[c]),
            body_index=int(cells.body_index[c]),
            body_count=int(cells.body_count[c]),
            geom_center=tuple(cells.geom_center[c]),
            octant_box=Box(
                cells.geom_center[c] - cells.geom_half[c],
                cells.geom_center[c] + cells.geom_half[c],
            ),
            tight_box=Box(cells.box_min[c], cells.box_max[c]),
            exp_center=tuple(cells.exp_center[c]),
            radius=float(cells.radius[c]),
            M=self.M[c] if self.M is not None else np.zeros(coeffs),
            L=self.L[c] if self.L is not None else np.zeros(coeffs),
        )

    def leaves(self):
        return self.cells.leaves()

    def as_source(self, remote=False, rank=-1):
        if self.M is None:
            raise ValueError("The upward pass must run before a tree can act as a source")
        return SourceView(self.cells, self.bodies, self.M, remote=remote, rank=rank)

    def cell_bodies(self, c):
        start = int(self.cells.body_index[c])
        return self.bodies[start : start + int(self.cells.body_count[c])]

    def by_id(self, values):
        """Reorder a per-body array from tree order into ascending body id order."""
        return np.asarray(values)[np.argsort(self.bodies.id, kind="stable")]

    def potentials_by_id(self):
        return self.by_id(self.bodies.potential)

    def forces_by_id(self):
        return self.by_id(self.bodies.force)


def _tighten(cells, positions, fallback):
    count = len(cells["key"])
    box_min = np.empty((count, 3))
    box_max = np.empty((count, 3))
    for c in range(count - 1, -1, -1):
        start, size = cells["body_index"][c], cells["body_count"][c]
        first, children = cells["child_index"][c], cells["child_count"][c]
        if size == 0:
            box_min[c] = box_max[c] = fallback
        elif children == 0:
            box_min[c] = positions[start : start + size].min(axis=0)
            box_max[c] = positions[start : start + size].max(axis=0)
        else:
            box_min[c] = box_min[first : first + children].min(axis=0)
            box_max[c] = box_max[first : first + children].max(axis=0)
    return box_min, box_max


def build(bodies, bounds, ncrit):
    """
    Build a local octree by top-down octant subdivision of ``bounds``.

    Args:
        bodies (Bodies): Bodies inside the (epsilon-expanded) bounds.
        bounds (Box): Local partition bounds.
        ncrit (int): Maximum number of bodies per leaf.

    Returns:
        Tree: Bodies copied in key order; an empty body list yields a single empty root.

    Raises:
        ConfigurationError: If ``ncrit < 1``.
        DomainError: If a body lies outside the bounds.
    """
    if ncrit < 1:
        raise ConfigurationError(f"ncrit must be at least 1, got {ncrit}")

    box = bounds.expanded()
    if len(bodies):
        keys = local_keys(bodies.position, bounds, MAX_LEVEL)
        permutation = np.argsort(keys, kind="stable")
        keys = keys[permutation]
        bodies = bodies.take(permutation)
    else:
        keys = np.zeros(0, dtype=np.uint64)
        bodies = bodies.copy()

    cells = {
        name: []
        for name in (
            "key",
            "level",
            "parent",
            "child_index",
            "child_count",
            "body_index",
            "body_count",
            "octant_lo",
            "octant_hi",
        )
    }

    def append(key, level, parent, start, size, lo, hi):
        for name, value in zip(
            cells,
            (key, level, parent, 0, 0, start, size, lo, hi),
        ):
            cells[name].append(value)

    append(0, 0, -1, 0, len(bodies), box.lo, box.hi)

    c = 0
    while c < len(cells["key"]):
        start, size = cells["body_index"][c], cells["body_count"][c]
        level = cells["level"][c]
        if size > ncrit and level < MAX_LEVEL:
            shift = np.uint64(3 * (MAX_LEVEL - level - 1))
            digits = ((keys[start : start + size] >> shift) & np.uint64(7)).astype(np.int64)
            edges = np.searchsorted(digits, np.arange(9))
            lo, hi = cells["octant_lo"][c], cells["octant_hi"][c]
            mid = 0.5 * (lo + hi)
            cells["child_index"][c] = len(cells["key"])
            for octant in range(8):
                if edges[octant + 1] == edges[octant]:
                    continue
                upper = np.array([(octant >> axis) & 1 for axis in range(3)], dtype=bool)
                append(
                    (cells["key"][c] << 3) | octant,
                    level + 1,
                    c,
                    start + int(edges[octant]),
                    int(edges[octant + 1] - edges[octant]),
                    np.where(upper, mid, lo),
                    np.where(upper, hi, mid),
                )
                cells["child_count"][c] += 1
        c += 1

    box_min, box_max = _tighten(cells, bodies.position, box.center)
    octant_lo = np.array(cells["octant_lo"])
    octant_hi = np.array(cells["octant_hi"])
    arrays = CellArrays(
        key=np.array(cells["key"], dtype=np.uint64),
        level=cells["level"],
        parent=cells["parent"],
        child_index=cells["child_index"],
        child_count=cells["child_count"],
        body_index=cells["body_index"],
        body_count=cells["body_count"],
        geom_center=0.5 * (octant_lo + octant_hi),
        geom_half=0.5 * (octant_hi - octant_lo),
        box_min=box_min,
        box_max=box_max,
        multipole_only=np.zeros(len(cells["key"]), dtype=bool),
    )
    return Tree(cells=arrays, bodies=bodies, bounds=bounds, ncrit=ncrit)


def _levels(cells):
    """Non-root cell indices grouped by level, shallowest first."""
    return [np.flatnonzero(cells.level == lvl) for lvl in range(1, int(cells.level.max()) + 1)]


def upward_pass(tree, order):
    """
    Fill ``tree.M`` bottom-up: P2M at leaves, then M2M level by level.

    Also allocates a zeroed ``tree.L`` for the traversal to accumulate into.
    """
    order = as_order(order)
    cells = tree.cells
    tree.order = order
    tree.M = order.zeros(len(cells))
    tree.L = order.zeros(len(cells))

    centers = cells.exp_center
    for c in cells.leaves():
        if cells.body_count[c]:
            leaf = tree.cell_bodies(c)
            tree.M[c] = p2m(leaf.position, leaf.charge, centers[c], order)

    for members in reversed(_levels(cells)):
        parents = cells.parent[members]
        shifted = m2m_batch(tree.M[members], centers[members] - centers[parents], order)
        np.add.at(tree.M, parents, shifted)
    return tree


def downward_pass(tree):
    """Cascade ``tree.L`` down with L2L, then apply L2P at every leaf."""
    order = tree.order
    cells = tree.cells
    centers = cells.exp_center

    for members in _levels(cells):
        parents = cells.parent[members]
        tree.L[members] += l2l_batch(tree.L[parents], centers[members] - centers[parents], order)

    for c in cells.leaves():
        if cells.body_count[c]:
            l2p(tree.cell_bodies(c), tree.L[c], centers[c], order)
    return tree
