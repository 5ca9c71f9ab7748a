"""
Dual tree traversal: M2L and P2P evaluation without explicit interaction lists.

A traversal walks (target cell, source cell) pairs from the two roots. Pairs
that pass the multipole acceptance criterion become M2L translations, leaf
pairs become P2P, everything else splits the cell with the larger radius.
Kernel calls are gathered over the whole walk and evaluated in batches.
Task spawning above ``nspawn`` bodies is tallied for the cost model only;
the result does not depend on it.
"""

import math

import attrs
import numpy as np

from components.geometry import Bodies, global_bounds
from components.kernels import m2l_batch, p2p
from components.tree import SourceView, Tree, build, downward_pass, upward_pass
from utils.errors import CoverageError, InsufficientLETError

# Coefficient entries per block of gathered M2L work
M2L_BLOCK = 1 << 22


def _open_unit(instance, attribute, value):
    if not 0.0 < value < 1.0:
        raise ValueError(f"{attribute.name} must lie in (0, 1), got {value}")


@attrs.frozen
class TraversalConfig:
    theta: float = attrs.field(default=0.4, converter=float, validator=_open_unit)
    nspawn: int = attrs.field(
        default=1000, converter=int, validator=attrs.validators.ge(1)
    )
    mutual: bool = attrs.field(default=False, converter=bool)


def _array():
    return attrs.field(eq=False)


@attrs.define(eq=False)
class InteractionStats:
    """
    Interaction tallies for one target tree, accumulated across traversals.

    Per-body counts are kept as difference arrays over the tree's body order
    and are only integrated when read.
    """

    ids: np.ndarray = _array()
    p2p_local_diff: np.ndarray = _array()
    p2p_remote_diff: np.ndarray = _array()
    m2l_local_diff: np.ndarray = _array()
    m2l_remote_diff: np.ndarray = _array()
    cell_m2l: np.ndarray = _array()
    cell_p2p: np.ndarray = _array()
    m2l_count: int = 0
    p2p_pairs: int = 0
    tasks: int = 0
    pairs: list = None
    coverage: np.ndarray = attrs.field(default=None, eq=False)
    coverage_sources: np.ndarray = attrs.field(default=None, eq=False)

    @classmethod
    def for_tree(cls, tree, coverage_size=None, record_pairs=False):
        n = len(tree.bodies)
        m = len(tree.cells)
        coverage = sources = None
        if coverage_size is not None:
            coverage = np.zeros((coverage_size, coverage_size), dtype=np.int64)
            sources = np.zeros(coverage_size, dtype=bool)
        return cls(
            ids=tree.bodies.id.copy(),
            p2p_local_diff=np.zeros(n + 1, dtype=np.int64),
            p2p_remote_diff=np.zeros(n + 1, dtype=np.int64),
            m2l_local_diff=np.zeros(n + 1),
            m2l_remote_diff=np.zeros(n + 1),
            cell_m2l=np.zeros(m, dtype=np.int64),
            cell_p2p=np.zeros(m, dtype=np.int64),
            pairs=[] if record_pairs else None,
            coverage=coverage,
            coverage_sources=sources,
        )

    @staticmethod
    def _integrate(diff):
        return np.cumsum(diff)[:-1]

    @property
    def p2p_local(self):
        return self._integrate(self.p2p_local_diff)

    @property
    def p2p_remote(self):
        return self._integrate(self.p2p_remote_diff)

    @property
    def m2l_local(self):
        return self._integrate(self.m2l_local_diff)

    @property
    def m2l_remote(self):
        return self._integrate(self.m2l_remote_diff)

    def local_sizes(self, kappa=1.0):
        """
        ``l_i`` in P2P-pair equivalents, in tree body order.

        A body counts every source body it meets through P2P plus ``kappa`` times
        its share of the M2L translations onto cells that contain it, so the sizes
        of a tree sum to its traversal cost in pair units.
        """
        return self.p2p_local + kappa * self.m2l_local

    def remote_sizes(self, kappa=1.0):
        """``r_i`` in P2P-pair equivalents, in tree body order."""
        return self.p2p_remote + kappa * self.m2l_remote

    def scatter(self, values, n):
        """Place per-body ``values`` (tree order) into a length-``n`` array indexed by body id."""
        out = np.zeros(n)
        out[self.ids] = values
        return out

    def work(self):
        return self.p2p_pairs, self.m2l_count


@attrs.frozen
class CoverageVerdict:
    ok: bool
    gaps: int
    doubles: int
    matrix: np.ndarray = attrs.field(eq=False)


def mac(target, source, theta):
    """
    Multipole acceptance criterion ``R_t + R_s < theta * |c_t - c_s|``.

    Args:
        target: Anything with ``radius`` and ``exp_center`` (e.g. a :class:`~components.tree.Cell`).
        source: Same for the source cell.
        theta (float): Opening angle.
    """
    distance = math.dist(target.exp_center, source.exp_center)
    return target.radius + source.radius < theta * distance


def _ranges(starts, counts):
    """Concatenation of ``arange(start, start + count)`` over paired entries."""
    counts = np.asarray(counts, dtype=np.int64)
    offsets = np.repeat(np.cumsum(counts) - counts, counts)
    return np.repeat(np.asarray(starts, dtype=np.int64), counts) + np.arange(int(counts.sum())) - offsets


def _children(cells, parents):
    """Children of every parent, plus the position of the owning parent for each child."""
    counts = cells.child_count[parents]
    return _ranges(cells.child_index[parents], counts), np.repeat(np.arange(len(parents)), counts)


_EMPTY = np.zeros(0, dtype=np.int64)


class _Traversal:
    """
    Dual traversal of one (target tree, source view) combination.

    Cell pairs are processed a whole level at a time as index arrays. Three
    frontiers are tracked: one-sided pairs against the source view, mutual
    pairs inside the target tree, and cells interacting with themselves.
    Kernel work is gathered over the complete walk and evaluated at the end,
    with one P2P call per target leaf.
    """

    def __init__(self, tree, source, config, stats):
        self.tree = tree
        self.source = source
        self.config = config
        self.stats = stats
        self.tc = tree.cells
        self.sc = source.cells
        self.t_center = tree.cells.exp_center
        self.t_radius = tree.cells.radius
        self.s_center = source.cells.exp_center
        self.s_radius = source.cells.radius
        self.m2l_targets = []
        self.m2l_sources = []
        self.p2p_targets = []
        self.p2p_sources = []
        self.p2p_mutual = []
        if source.remote:
            self.p2p_diff, self.m2l_diff = stats.p2p_remote_diff, stats.m2l_remote_diff
        else:
            self.p2p_diff, self.m2l_diff = stats.p2p_local_diff, stats.m2l_local_diff

    # Recording

    def _record(self, kind, a, b):
        stats = self.stats
        if stats.pairs is not None:
            stats.pairs.extend((kind, int(x), int(y)) for x, y in zip(a.tolist(), b.tolist()))
        if stats.coverage is None:
            return
        tc, sc = self.tc, self.sc
        ids_a, ids_b = self.tree.bodies.id, self.source.bodies.id
        for x, y in zip(a.tolist(), b.tolist()):
            rows = ids_a[tc.body_index[x] : tc.body_index[x] + tc.body_count[x]]
            cols = ids_b[sc.body_index[y] : sc.body_index[y] + sc.body_count[y]]
            stats.coverage[np.ix_(rows, cols)] += 1

    def _add_m2l(self, a, b):
        if len(a) == 0:
            return
        stats = self.stats
        count = self.tc.body_count[a]
        start = self.tc.body_index[a]
        # Every body of the target cell carries 1/count of the translation
        share = 1.0 / count
        np.add.at(self.m2l_diff, start, share)
        np.add.at(self.m2l_diff, start + count, -share)
        np.add.at(stats.cell_m2l, a, 1)
        stats.m2l_count += len(a)
        self.m2l_targets.append(a)
        self.m2l_sources.append(b)
        self._record("m2l", a, b)

    def _add_p2p(self, a, b, source_cells):
        if len(a) == 0:
            return
        stats = self.stats
        count_a = self.tc.body_count[a]
        count_b = source_cells.body_count[b]
        start = self.tc.body_index[a]
        np.add.at(self.p2p_diff, start, count_b)
        np.add.at(self.p2p_diff, start + count_a, -count_b)
        pairs = count_a * count_b
        np.add.at(stats.cell_p2p, a, pairs)
        stats.p2p_pairs += int(pairs.sum())
        self._record("p2p", a, b)

    def _one_sided_p2p(self, a, b):
        sc = self.sc
        missing = sc.multipole_only[b] | (sc.body_index[b] < 0)
        if missing.any():
            raise InsufficientLETError(
                f"Source cell {int(b[missing][0])} from rank {self.source.rank} reached P2P without bodies"
            )
        self._add_p2p(a, b, sc)
        self.p2p_targets.append(a)
        self.p2p_sources.append(b)

    def _mutual_p2p(self, a, b):
        self._add_p2p(a, b, self.tc)
        self._add_p2p(b, a, self.tc)
        self.p2p_mutual.extend(zip(a.tolist(), b.tolist()))

    # Waves

    def _pairs(self, a, b, mutual):
        """
        Process one level of cell pairs.

        Args:
            a (np.ndarray): Target cells.
            b (np.ndarray): Source cells, in the target tree when ``mutual``.
            mutual (bool): Apply every interaction in both directions.

        Returns:
            tuple: The next level as ``(targets, sources)`` arrays.

        Raises:
            InsufficientLETError: If a multipole-only source cell has to be opened.
        """
        tc = self.tc
        sc = tc if mutual else self.sc
        s_center = self.t_center if mutual else self.s_center
        s_radius = self.t_radius if mutual else self.s_radius

        # Drop empty cells
        keep = (tc.body_count[a] > 0) & (sc.body_count[b] > 0)
        a, b = a[keep], b[keep]

        # Far pairs become M2L
        offset = self.t_center[a] - s_center[b]
        distance = np.sqrt(np.einsum("ij,ij->i", offset, offset))
        radius_a, radius_b = self.t_radius[a], s_radius[b]
        accept = radius_a + radius_b < self.config.theta * distance
        if mutual:
            self._add_m2l(np.concatenate([a[accept], b[accept]]), np.concatenate([b[accept], a[accept]]))
        else:
            self._add_m2l(a[accept], b[accept])
        near = ~accept
        a, b, radius_a, radius_b = a[near], b[near], radius_a[near], radius_b[near]

        # Leaf pairs become P2P
        leaf_a = tc.child_count[a] == 0
        leaf_b = sc.child_count[b] == 0
        both = leaf_a & leaf_b
        if mutual:
            self._mutual_p2p(a[both], b[both])
        else:
            self._one_sided_p2p(a[both], b[both])

        # Everything else opens the larger cell, the target on ties
        split_target = ~both & (leaf_b | (~leaf_a & (radius_a >= radius_b)))
        split_source = ~both & ~split_target
        if not mutual:
            blocked = split_source & sc.multipole_only[b]
            if blocked.any():
                raise InsufficientLETError(
                    f"Multipole-only cell {int(b[blocked][0])} from rank {self.source.rank} needs splitting"
                )
            spawned = split_target & (tc.body_count[a] > self.config.nspawn)
            self.stats.tasks += int(tc.child_count[a[spawned]].sum())

        target_children, owner = _children(tc, a[split_target])
        source_children, source_owner = _children(sc, b[split_source])
        return (
            np.concatenate([target_children, a[split_source][source_owner]]),
            np.concatenate([b[split_target][owner], source_children]),
        )

    def _selves(self, cells):
        """
        Open cells that interact with themselves.

        Returns:
            tuple: ``(children, mutual pairs, one-sided pairs)``; children keep
            interacting with themselves, siblings meet through the pairs.
        """
        tc = self.tc
        cells = cells[tc.body_count[cells] > 0]
        leaf = tc.child_count[cells] == 0
        self._one_sided_p2p(cells[leaf], cells[leaf])

        parents = cells[~leaf]
        children, _ = _children(tc, parents)
        count = tc.child_count[parents]
        square = count * count
        owner = np.repeat(np.arange(len(parents)), square)
        local = np.arange(int(square.sum())) - np.repeat(np.cumsum(square) - square, square)
        first = tc.child_index[parents][owner]
        c = first + local // count[owner]
        d = first + local % count[owner]

        # Large parents run their children as concurrent tasks, each owning only its own subtree
        spawning = tc.body_count[parents] > self.config.nspawn
        self.stats.tasks += int(count[spawning].sum())
        spawned = spawning[owner]
        one_sided = spawned & (c != d)
        mutual = ~spawned & (c < d)
        return children, (c[mutual], d[mutual]), (c[one_sided], d[one_sided])

    # Kernels

    def _evaluate(self):
        tree, source, tc, sc = self.tree, self.source, self.tc, self.sc
        if self.m2l_targets:
            targets = np.concatenate(self.m2l_targets)
            sources = np.concatenate(self.m2l_sources)
            block = max(1, M2L_BLOCK // tree.L.shape[1])
            for lo in range(0, len(targets), block):
                t, s = targets[lo : lo + block], sources[lo : lo + block]
                local = m2l_batch(source.M[s], self.s_center[s] - self.t_center[t], tree.order)
                order = np.argsort(t, kind="stable")
                cells, first = np.unique(t[order], return_index=True)
                tree.L[cells] += np.add.reduceat(local[order], first, axis=0)

        if self.p2p_targets:
            targets = np.concatenate(self.p2p_targets)
            sources = np.concatenate(self.p2p_sources)
            order = np.argsort(targets, kind="stable")
            targets, sources = targets[order], sources[order]
            cells, first = np.unique(targets, return_index=True)
            bounds = np.append(first, len(targets))
            index = _ranges(sc.body_index[sources], sc.body_count[sources])
            offsets = np.concatenate([[0], np.cumsum(sc.body_count[sources])])
            position, charge = source.bodies.position, source.bodies.charge
            for a, lo, hi in zip(cells.tolist(), bounds[:-1].tolist(), bounds[1:].tolist()):
                picked = index[offsets[lo] : offsets[hi]]
                start = tc.body_index[a]
                p2p(
                    tree.bodies[start : start + tc.body_count[a]],
                    Bodies.from_arrays(position[picked], charge[picked]),
                )

        for a, b in self.p2p_mutual:
            p2p(
                tree.bodies[tc.body_index[a] : tc.body_index[a] + tc.body_count[a]],
                tree.bodies[tc.body_index[b] : tc.body_index[b] + tc.body_count[b]],
                mutual=True,
            )

    def run(self, mutual):
        root = np.zeros(1, dtype=np.int64)
        selves = root if mutual else _EMPTY
        one_sided = (_EMPTY, _EMPTY) if mutual else (root, root)
        within = (_EMPTY, _EMPTY)
        self.stats.tasks += 1

        while len(selves) or len(one_sided[0]) or len(within[0]):
            one_sided = self._pairs(*one_sided, mutual=False)
            within = self._pairs(*within, mutual=True)
            if len(selves):
                selves, new_within, new_one_sided = self._selves(selves)
                within = tuple(np.concatenate(pair) for pair in zip(within, new_within))
                one_sided = tuple(np.concatenate(pair) for pair in zip(one_sided, new_one_sided))
        self._evaluate()


def _sources(source):
    if isinstance(source, Tree):
        return [source.as_source()]
    if isinstance(source, SourceView):
        return [source]
    if isinstance(source, (list, tuple)):
        return [view for item in source for view in _sources(item)]
    return list(source.sources())


def dual_traverse(target_tree, source, config, stats=None):
    """
    Accumulate far-field locals into ``target_tree.L`` and near-field P2P into its bodies.

    Args:
        target_tree (Tree): Tree after :func:`~components.tree.upward_pass` (``L`` allocated).
        source: A :class:`Tree`, a :class:`SourceView` or a LET (anything with ``sources()``).
        config (TraversalConfig): Opening angle, spawn threshold and mutual flag.
        stats (InteractionStats, optional): Tallies to extend; a fresh one is created when omitted.

    Returns:
        InteractionStats: The updated stats.

    Raises:
        InsufficientLETError: If a fragment lacks the cells or bodies the traversal needs.
    """
    if target_tree.L is None:
        raise ValueError("target_tree has no local expansions; run upward_pass first")
    if stats is None:
        stats = InteractionStats.for_tree(target_tree)

    for view in _sources(source):
        if len(view.cells) == 0:
            continue
        if view.M.shape[1] != target_tree.L.shape[1]:
            raise ValueError(
                f"Source expansion length {view.M.shape[1]} does not match target {target_tree.L.shape[1]}"
            )
        if stats.coverage is not None:
            if np.any(view.cells.body_index < 0):
                raise ValueError("Coverage tracking needs sources that carry all their bodies")
            stats.coverage_sources[view.bodies.id] = True

        # Mutual evaluation only applies when the tree is its own source
        self_source = view.bodies is target_tree.bodies and view.cells is target_tree.cells
        _Traversal(target_tree, view, config, stats).run(mutual=config.mutual and self_source)
    return stats


def coverage_check(stats, n, raise_on_failure=False):
    """
    Check that every (target, source) influence was applied exactly once.

    Args:
        stats (InteractionStats): Stats recorded with coverage tracking.
        n (int): Number of body ids the matrix spans.
        raise_on_failure (bool, optional): Raise instead of returning a failed verdict.

    Returns:
        CoverageVerdict: Gap and double-cover counts and the cover-count matrix.

    Raises:
        CoverageError: When ``raise_on_failure`` and the check fails.
    """
    if stats.coverage is None:
        raise ValueError("stats were recorded without coverage tracking")
    if stats.coverage.shape != (n, n):
        raise ValueError(f"Coverage matrix has shape {stats.coverage.shape}, expected {(n, n)}")

    targets = np.zeros(n, dtype=bool)
    targets[stats.ids] = True
    expected = np.outer(targets, stats.coverage_sources).astype(np.int64)
    matrix = stats.coverage
    gaps = int(np.count_nonzero(matrix < expected))
    doubles = int(np.count_nonzero(matrix > expected))
    verdict = CoverageVerdict(ok=gaps == 0 and doubles == 0, gaps=gaps, doubles=doubles, matrix=matrix)
    if raise_on_failure and not verdict.ok:
        raise CoverageError(f"Traversal coverage failed: {gaps} gaps, {doubles} double covers")
    return verdict


def evaluate(bodies, order, theta=0.4, ncrit=64, nspawn=1000, mutual=False, record_coverage=False):
    """
    Single-rank FMM: build, upward pass, self traversal, downward pass.

    Returns:
        tuple: ``(tree, stats)``; potentials and forces live on ``tree.bodies``.
    """
    tree = build(bodies, global_bounds(bodies), ncrit)
    upward_pass(tree, order)
    coverage_size = int(bodies.id.max()) + 1 if record_coverage else None
    stats = InteractionStats.for_tree(tree, coverage_size=coverage_size)
    dual_traverse(tree, tree, TraversalConfig(theta=theta, nspawn=nspawn, mutual=mutual), stats)
    downward_pass(tree)
    return tree, stats
