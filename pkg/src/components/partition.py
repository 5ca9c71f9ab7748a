"""
Weighted orthogonal recursive multisection.

Each split divides a group of ``k`` ranks ``ceil(k/2) : floor(k/2)`` along the
longest axis of the group's box. The splitter coordinate comes from a few
rounds of histogram refinement whose per-rank counts are combined by a
reduction, so only ``bins`` numbers per rank travel per round.
"""

import math

import attrs
import numpy as np

from components.geometry import Box
from utils.errors import ConfigurationError, DomainError
from utils.logger import logger

DEFAULT_BINS = 64
DEFAULT_ROUNDS = 3

# Relative tolerance when matching an alpha against the trial history
ALPHA_MATCH_RTOL = 1e-9

# Trial step sizes shrink as sqrt(s) until they fall below this
MIN_ALPHA_STEP = 1.0 + 1e-6


def _finite(instance, attribute, value):
    if not math.isfinite(value):
        raise ValueError(f"{attribute.name} must be finite, got {value}")


@attrs.frozen
class WeightParams:
    alpha: float = attrs.field(
        default=1.0, converter=float, validator=[_finite, attrs.validators.ge(0.0)]
    )


def body_weight(l, r, params):
    """Workload weight ``l + alpha * r``; works elementwise on arrays."""
    return l + params.alpha * r


@attrs.define(eq=False)
class Histogram:
    """Weighted counts over ``bins`` equal slices of ``[lo, hi]`` along axis ``dim``."""

    dim: int
    lo: float
    hi: float
    counts: np.ndarray
    closed: bool = True

    @property
    def bins(self):
        return len(self.counts)

    @property
    def edges(self):
        return self.lo + (self.hi - self.lo) * np.arange(self.bins + 1) / self.bins

    @classmethod
    def accumulate(cls, positions, weights, dim, lo, hi, bins, closed=True):
        """
        Histogram one rank's bodies.

        Bins are half-open; the upper edge ``hi`` itself belongs to the last bin
        only when ``closed``.
        """
        histogram = cls(dim, lo, hi, np.zeros(bins), closed)
        coords = np.asarray(positions, dtype=float).reshape(-1, 3)[:, dim]
        weights = np.asarray(weights, dtype=float)
        inside = (coords >= lo) & ((coords <= hi) if closed else (coords < hi))
        if not np.any(inside):
            return histogram
        if hi == lo:
            histogram.counts[0] = weights[inside].sum()
            return histogram
        slots = np.searchsorted(histogram.edges, coords[inside], side="right") - 1
        slots = np.clip(slots, 0, bins - 1)
        histogram.counts = np.bincount(slots, weights=weights[inside], minlength=bins)
        return histogram

    def combine(self, other):
        return Histogram(self.dim, self.lo, self.hi, self.counts + other.counts, self.closed)


def sum_histograms(histograms):
    """Default reduction: elementwise sum in rank order."""
    histograms = list(histograms)
    result = histograms[0]
    for histogram in histograms[1:]:
        result = result.combine(histogram)
    return result


def histogram_split(
    parts,
    dim,
    target_fraction,
    rounds=DEFAULT_ROUNDS,
    bins=DEFAULT_BINS,
    interval=None,
    reducer=sum_histograms,
):
    """
    Find a splitter that puts ``target_fraction`` of the total weight on its left.

    Args:
        parts (list): Per-rank ``(positions, weights)`` pairs.
        dim (int): Axis to split.
        target_fraction (float): Weight fraction wanted at or below the splitter, in (0, 1).
        rounds (int, optional): Refinement rounds.
        bins (int, optional): Bins per round.
        interval (tuple, optional): Initial ``(lo, hi)``; defaults to the coordinate range of all parts.
        reducer (callable, optional): Combines the per-rank histograms of one round.

    Returns:
        float: Midpoint of the final bin. Bodies with ``x <= splitter`` go left.

    Raises:
        DomainError: If the total weight is zero.
        ConfigurationError: If ``target_fraction`` is outside (0, 1).
    """
    if not 0.0 < target_fraction < 1.0:
        raise ConfigurationError(f"target_fraction must lie in (0, 1), got {target_fraction}")
    if rounds < 1 or bins < 1:
        raise ConfigurationError(f"rounds and bins must be positive, got {rounds} and {bins}")

    parts = [
        (np.asarray(p, dtype=float).reshape(-1, 3), np.asarray(w, dtype=float)) for p, w in parts
    ]
    total = sum(float(w.sum()) for _, w in parts)
    if total <= 0.0:
        raise DomainError("Cannot split a population with zero total weight")

    if interval is None:
        coords = np.concatenate([p[:, dim] for p, _ in parts])
        interval = (float(coords.min()), float(coords.max()))
    lo, hi = interval
    target = target_fraction * total
    below = float(sum(w[p[:, dim] < lo].sum() for p, w in parts))
    closed = True

    for _ in range(rounds):
        histogram = reducer(
            Histogram.accumulate(p, w, dim, lo, hi, bins, closed) for p, w in parts
        )
        cumulative = below + np.cumsum(histogram.counts)
        k = min(int(np.searchsorted(cumulative, target, side="left")), bins - 1)
        below = float(cumulative[k - 1]) if k > 0 else below
        edges = histogram.edges
        closed = closed and k == bins - 1
        lo, hi = float(edges[k]), float(edges[k + 1])
        if lo == hi:
            break

    return 0.5 * (lo + hi)


@attrs.define(eq=False)
class SplitNode:
    """
    One node of the splitter tree.

    Leaves carry ``rank``; internal nodes carry the split axis, coordinate and
    the number of ranks on the left.
    """

    first_rank: int
    ranks: int
    depth: int
    box: Box
    dim: int = -1
    coordinate: float = math.nan
    left_ranks: int = 0
    rounds: int = 0
    left: "SplitNode" = None
    right: "SplitNode" = None

    @property
    def is_leaf(self):
        return self.ranks == 1

    @property
    def rank(self):
        return self.first_rank if self.is_leaf else -1

    def internal_nodes(self):
        """Internal nodes in breadth-first order."""
        queue = [self]
        nodes = []
        while queue:
            node = queue.pop(0)
            if not node.is_leaf:
                nodes.append(node)
                queue.extend([node.left, node.right])
        return nodes


@attrs.define(eq=False)
class PartitionMap:
    ranks: int
    domains: list
    root: SplitNode
    global_box: Box

    def locate(self, positions):
        """Destination rank for every row of ``positions``."""
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        destination = np.empty(len(positions), dtype=np.int64)
        stack = [(self.root, np.arange(len(positions)))]
        while stack:
            node, index = stack.pop()
            if node.is_leaf:
                destination[index] = node.rank
                continue
            left = positions[index, node.dim] <= node.coordinate
            stack.append((node.left, index[left]))
            stack.append((node.right, index[~left]))
        return destination

    def rank_weights(self, destinations, weights):
        """Summed weight per rank."""
        return np.bincount(
            np.asarray(destinations), weights=np.asarray(weights, dtype=float), minlength=self.ranks
        )

    @property
    def depth(self):
        nodes = self.root.internal_nodes()
        return max((node.depth for node in nodes), default=-1) + 1


def imbalance(weights):
    """Max over mean of per-rank weights; 1 for a perfectly balanced (or empty) load."""
    weights = np.asarray(weights, dtype=float)
    mean = weights.mean() if len(weights) else 0.0
    return float(weights.max() / mean) if mean > 0 else 1.0


def orb_multisection(
    parts,
    global_box,
    ranks,
    params=None,
    sizes=None,
    rounds=DEFAULT_ROUNDS,
    bins=DEFAULT_BINS,
    reducer=sum_histograms,
):
    """
    Partition bodies into ``ranks`` axis-aligned domains of equal weight.

    Args:
        parts (list[Bodies]): Bodies currently held by each rank.
        global_box (Box): Box tiled by the resulting domains.
        ranks (int): Number of domains.
        params (WeightParams, optional): Weighting constant; only used together with ``sizes``.
        sizes (list, optional): Per-part ``(l, r)`` interaction sizes. When given,
            weights are ``l + alpha * r``; otherwise each body's ``weight`` is used.

    Returns:
        tuple: ``(PartitionMap, destinations)`` with one destination array per part.

    Raises:
        ConfigurationError: If ``ranks < 1``.
    """
    if ranks < 1:
        raise ConfigurationError(f"ranks must be at least 1, got {ranks}")

    if sizes is not None:
        params = params or WeightParams()
        weights = [body_weight(l, r, params) for l, r in sizes]
    else:
        weights = [part.weight for part in parts]
    positions = [part.position for part in parts]
    destinations = [np.zeros(len(p), dtype=np.int64) for p in positions]
    domains = [None] * ranks

    def split(node, masks):
        if node.is_leaf:
            domains[node.rank] = node.box
            for dest, mask in zip(destinations, masks):
                dest[mask] = node.rank
            return

        k = node.ranks
        left_ranks = math.ceil(k / 2)
        dim = node.box.longest_axis
        lo, hi = node.box.min[dim], node.box.max[dim]
        group = [(p[m], w[m]) for p, w, m in zip(positions, weights, masks)]
        rounds_used = []

        def counting(histograms):
            rounds_used.append(1)
            return reducer(histograms)

        try:
            coordinate = histogram_split(
                group, dim, left_ranks / k, rounds, bins, interval=(lo, hi), reducer=counting
            )
        except DomainError:
            coordinate = lo + (hi - lo) * left_ranks / k
            logger.warning(
                f"Ranks {node.first_rank}..{node.first_rank + k - 1} hold no weight, splitting geometrically"
            )

        node.dim, node.coordinate, node.left_ranks = dim, coordinate, left_ranks
        node.rounds = len(rounds_used)
        node.left = SplitNode(node.first_rank, left_ranks, node.depth + 1, node.box.with_max(dim, coordinate))
        node.right = SplitNode(
            node.first_rank + left_ranks, k - left_ranks, node.depth + 1, node.box.with_min(dim, coordinate)
        )
        left_masks = [m & (p[:, dim] <= coordinate) for p, m in zip(positions, masks)]
        right_masks = [m & ~lm for m, lm in zip(masks, left_masks)]
        split(node.left, left_masks)
        split(node.right, right_masks)

    root = SplitNode(0, ranks, 0, global_box)
    split(root, [np.ones(len(p), dtype=bool) for p in positions])
    return PartitionMap(ranks=ranks, domains=domains, root=root, global_box=global_box), destinations


def _tried(history, alpha):
    return any(math.isclose(a, alpha, rel_tol=ALPHA_MATCH_RTOL, abs_tol=1e-15) for a, _ in history)


def best_alpha(history):
    """Alpha with the lowest recorded runtime; the earliest wins ties."""
    if not history:
        raise ValueError("history must contain at least one (alpha, runtime) entry")
    return min(history, key=lambda entry: entry[1])[0]


def adapt_alpha(history):
    """
    Next alpha to try, from the ``(alpha, runtime)`` history of previous steps.

    Multiplicative hill-climb around the best alpha so far: try ``best * s``,
    then ``best / s``; once both are recorded, shrink ``s`` to ``sqrt(s)``.
    ``s`` starts at 2. A best alpha of 0 tries ``s - 1`` upwards instead.

    Args:
        history (list): Sequence of ``(alpha, runtime)`` pairs, at least one.

    Returns:
        float: The next alpha.
    """
    history = list(history)
    best = best_alpha(history)
    step = 2.0
    while step > MIN_ALPHA_STEP:
        candidates = [best * step, best / step] if best > 0 else [step - 1.0]
        for candidate in candidates:
            if not _tried(history, candidate):
                return candidate
        step = math.sqrt(step)
    return best
