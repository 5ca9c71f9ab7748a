"""
Laplace FMM operators in a Cartesian Taylor basis.

Coefficient vectors are indexed by multi-indices ``α = (αx, αy, αz)`` with
``|α| < P`` in graded-lexicographic order: degree ascending, then ``αx``
descending, then ``αy`` descending. Index 0 is the monopole, indices 1..3
are ``(1,0,0)``, ``(0,1,0)``, ``(0,0,1)``.

Conventions:

* ``M[α] = Σ_j q_j s_j^α / α!`` with ``s_j`` the offset from the expansion center.
* ``L[α]`` is the α-th derivative of the far-field potential at the expansion
  center, so evaluation is ``Σ_α L[α] t^α / α!``.
* Forces accumulate ``+∇φ`` for both P2P and L2P.
"""

import functools
import math

import attrs
import numpy as np

from components.geometry import Bodies
from utils.errors import DomainError

MAX_ORDER = 16

# Batched M2L works in row chunks whose (rows x pair-table) scratch stays near
# M2L_SCRATCH entries, with at least M2L_CHUNK rows per chunk
M2L_CHUNK = 256
M2L_SCRATCH = 1 << 21

# Targets per chunk in the direct-sum oracle
DIRECT_CHUNK = 128


def _multi_indices(order):
    indices = []
    for degree in range(order):
        for ax in range(degree, -1, -1):
            for ay in range(degree - ax, -1, -1):
                indices.append((ax, ay, degree - ax - ay))
    return indices


def _segment_starts(keys):
    keys = np.asarray(keys)
    return np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])


@attrs.frozen
class _Tables:
    indices: np.ndarray = attrs.field(eq=False)
    index_of: dict = attrs.field(eq=False)
    degree: np.ndarray = attrs.field(eq=False)
    factorial: np.ndarray = attrs.field(eq=False)
    up: tuple = attrs.field(eq=False)
    down: tuple = attrs.field(eq=False)
    m2l: tuple = attrs.field(eq=False)
    plus: np.ndarray = attrs.field(eq=False)
    recurrence: list = attrs.field(eq=False)


@functools.lru_cache(maxsize=None)
def _build_tables(order):
    indices = _multi_indices(order)
    index_of = {alpha: k for k, alpha in enumerate(indices)}
    count = len(indices)
    pad = count

    degree = np.array([sum(alpha) for alpha in indices])
    factorial = np.array(
        [math.prod(math.factorial(a) for a in alpha) for alpha in indices], dtype=float
    )

    # (big, small, diff) with small <= big componentwise
    triples = []
    for big, alpha in enumerate(indices):
        for small, beta in enumerate(indices):
            if all(b <= a for a, b in zip(alpha, beta)):
                diff = index_of[tuple(a - b for a, b in zip(alpha, beta))]
                triples.append((big, small, diff))
    triples = np.array(triples, dtype=np.int64)
    by_big = triples[np.lexsort((triples[:, 1], triples[:, 0]))]
    by_small = triples[np.lexsort((triples[:, 0], triples[:, 1]))]
    up = (by_big[:, 0], by_big[:, 1], by_big[:, 2], _segment_starts(by_big[:, 0]))
    down = (
        by_small[:, 1],
        by_small[:, 0],
        by_small[:, 2],
        _segment_starts(by_small[:, 1]),
    )

    # (a, b, a+b, (-1)^|b|) for |a| + |b| < P, grouped by a
    pairs = []
    for a, alpha in enumerate(indices):
        for b, beta in enumerate(indices):
            gamma = tuple(x + y for x, y in zip(alpha, beta))
            if sum(gamma) < order:
                pairs.append((a, b, index_of[gamma], -1 if sum(beta) % 2 else 1))
    pairs = np.array(pairs, dtype=np.int64)
    m2l = (pairs[:, 0], pairs[:, 1], pairs[:, 2], pairs[:, 3].astype(float))
    m2l = m2l + (_segment_starts(pairs[:, 0]),)

    plus = np.full((3, count), pad, dtype=np.int64)
    for k, alpha in enumerate(indices):
        for axis in range(3):
            raised = list(alpha)
            raised[axis] += 1
            plus[axis, k] = index_of.get(tuple(raised), pad)

    # Per degree: D^γ = -(Σ_k c_k x_k D^{γ-e_k} + Σ_k d_k D^{γ-2e_k}) / r²,
    # split on the first nonzero axis i of γ
    recurrence = []
    for n in range(1, order):
        targets, first, c, second, d = [], [], [], [], []
        for k, gamma in enumerate(indices):
            if sum(gamma) != n:
                continue
            i = next(axis for axis in range(3) if gamma[axis] > 0)
            row_first, row_c, row_second, row_d = [], [], [], []
            for axis in range(3):
                g = gamma[axis]
                if axis == i:
                    coef_c, coef_d = 2 * g - 1, (g - 1) ** 2
                else:
                    coef_c, coef_d = 2 * g, g * (g - 1)
                lowered = list(gamma)
                lowered[axis] -= 1
                row_first.append(index_of[tuple(lowered)] if g >= 1 else pad)
                row_c.append(coef_c if g >= 1 else 0)
                lowered[axis] -= 1
                row_second.append(index_of[tuple(lowered)] if g >= 2 else pad)
                row_d.append(coef_d if g >= 2 else 0)
            targets.append(k)
            first.append(row_first)
            c.append(row_c)
            second.append(row_second)
            d.append(row_d)
        recurrence.append(
            (
                np.array(targets),
                np.array(first),
                np.array(c, dtype=float),
                np.array(second),
                np.array(d, dtype=float),
            )
        )

    return _Tables(
        indices=np.array(indices, dtype=np.int64),
        index_of=index_of,
        degree=degree,
        factorial=factorial,
        up=up,
        down=down,
        m2l=m2l,
        plus=plus,
        recurrence=recurrence,
    )


@attrs.frozen
class ExpansionOrder:
    """Truncation order ``P``: expansions hold every multi-index with ``|α| < P``."""

    P: int = attrs.field(
        converter=int,
        validator=[attrs.validators.ge(1), attrs.validators.le(MAX_ORDER)],
    )

    @property
    def coeff_count(self):
        return self.P * (self.P + 1) * (self.P + 2) // 6

    @property
    def tables(self):
        return _build_tables(self.P)

    def index(self, alpha):
        """Position of multi-index ``alpha`` in a coefficient vector."""
        return self.tables.index_of[tuple(alpha)]

    def zeros(self, rows=None):
        shape = self.coeff_count if rows is None else (rows, self.coeff_count)
        return np.zeros(shape)


def as_order(order):
    return order if isinstance(order, ExpansionOrder) else ExpansionOrder(order)


def monomials(vectors, order):
    """
    Scaled monomials ``v^α / α!`` for each row of ``vectors``.

    Args:
        vectors (np.ndarray): ``(m, 3)`` offsets.
        order (ExpansionOrder or int): Truncation order.

    Returns:
        np.ndarray: ``(m, coeff_count)`` array.
    """
    order = as_order(order)
    tables = order.tables
    vectors = np.asarray(vectors, dtype=float).reshape(-1, 3)
    powers = np.ones((len(vectors), 3, order.P))
    for p in range(1, order.P):
        powers[:, :, p] = powers[:, :, p - 1] * vectors
    ix, iy, iz = tables.indices.T
    return powers[:, 0, ix] * powers[:, 1, iy] * powers[:, 2, iz] / tables.factorial


def laplace_derivatives(vectors, order):
    """
    Derivative tensor ``D^γ (1/|r|)`` for every ``|γ| < P`` at each row of ``vectors``.

    Raises:
        DomainError: If any vector has zero length.
    """
    order = as_order(order)
    vectors = np.asarray(vectors, dtype=float).reshape(-1, 3)
    r2 = np.einsum("ij,ij->i", vectors, vectors)
    if np.any(r2 == 0.0):
        raise DomainError("Derivatives of 1/r are undefined at zero displacement")

    derivs = np.zeros((len(vectors), order.coeff_count + 1))
    derivs[:, 0] = 1.0 / np.sqrt(r2)
    for targets, first, c, second, d in order.tables.recurrence:
        lower = np.einsum("mnk,mk,nk->mn", derivs[:, first], vectors, c)
        lower2 = np.einsum("mnk,nk->mn", derivs[:, second], d)
        derivs[:, targets] = -(lower + lower2) / r2[:, None]
    return derivs[:, :-1]


def _translate(coeffs, shifts, order, table):
    _, in_rows, diff, starts = table
    mono = monomials(shifts, order)
    contrib = coeffs[:, in_rows] * mono[:, diff]
    return np.add.reduceat(contrib, starts, axis=1)


def p2m(positions, charges, center, order):
    """
    Multipole moments of point charges about ``center``.

    Returns:
        np.ndarray: Coefficient vector ``M[α] = Σ_j q_j (r_j - center)^α / α!``.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    charges = np.asarray(charges, dtype=float)
    return charges @ monomials(positions - np.asarray(center, dtype=float), order)


def m2m_batch(child_moments, shifts, order):
    """Shift each row of ``child_moments`` by the matching ``shifts`` row (child minus parent center)."""
    order = as_order(order)
    child_moments = np.asarray(child_moments, dtype=float).reshape(-1, order.coeff_count)
    return _translate(child_moments, shifts, order, order.tables.up)


def m2m(child_moments, shift, order):
    """Exact moment shift ``Mparent[α] = Σ_{β<=α} Mchild[β] shift^{α-β} / (α-β)!``."""
    return m2m_batch(np.asarray(child_moments)[None, :], np.asarray(shift)[None, :], order)[0]


def l2l_batch(parent_locals, shifts, order):
    """Re-center each row of ``parent_locals`` by the matching ``shifts`` row (child minus parent center)."""
    order = as_order(order)
    parent_locals = np.asarray(parent_locals, dtype=float).reshape(-1, order.coeff_count)
    return _translate(parent_locals, shifts, order, order.tables.down)


def l2l(parent_locals, shift, order):
    """Exact Taylor re-centering ``Lchild[α] = Σ_{β>=α} Lparent[β] shift^{β-α} / (β-α)!``."""
    return l2l_batch(np.asarray(parent_locals)[None, :], np.asarray(shift)[None, :], order)[0]


def m2l_batch(source_moments, displacements, order):
    """
    Local expansions induced by multipoles, one row per interaction.

    Args:
        source_moments (np.ndarray): ``(m, coeff_count)`` source multipoles.
        displacements (np.ndarray): ``(m, 3)`` source center minus target center.
        order (ExpansionOrder or int): Truncation order.

    Returns:
        np.ndarray: ``(m, coeff_count)`` local coefficients.

    Raises:
        DomainError: On a zero displacement.
    """
    order = as_order(order)
    source_moments = np.asarray(source_moments, dtype=float).reshape(-1, order.coeff_count)
    displacements = np.asarray(displacements, dtype=float).reshape(-1, 3)
    a_rows, b_rows, g_rows, signs, starts = order.tables.m2l
    chunk = max(M2L_CHUNK, M2L_SCRATCH // len(a_rows))

    out = np.empty_like(source_moments)
    for lo in range(0, len(source_moments), chunk):
        hi = lo + chunk
        derivs = laplace_derivatives(-displacements[lo:hi], order)
        contrib = source_moments[lo:hi, b_rows] * signs * derivs[:, g_rows]
        out[lo:hi] = np.add.reduceat(contrib, starts, axis=1)
    return out


def m2l(source_moments, displacement, order):
    """Single multipole-to-local translation, see :func:`m2l_batch`."""
    return m2l_batch(
        np.asarray(source_moments)[None, :], np.asarray(displacement)[None, :], order
    )[0]


def evaluate_local(local_coeffs, center, positions, order):
    """
    Potential and gradient of a local expansion at ``positions``.

    Returns:
        tuple: ``(potential (n,), gradient (n, 3))``.
    """
    order = as_order(order)
    mono = monomials(np.asarray(positions, dtype=float).reshape(-1, 3) - center, order)
    padded = np.append(np.asarray(local_coeffs, dtype=float), 0.0)
    potential = mono @ padded[:-1]
    gradient = np.stack([mono @ padded[order.tables.plus[axis]] for axis in range(3)], axis=1)
    return potential, gradient


def l2p(bodies, local_coeffs, center, order):
    """Add a leaf's local expansion into the bodies' potential and force accumulators."""
    potential, gradient = evaluate_local(local_coeffs, center, bodies.position, order)
    bodies.potential += potential
    bodies.force += gradient


def p2p(targets, sources, mutual=False):
    """
    Direct interaction of ``sources`` on ``targets``.

    Zero-distance pairs are skipped. With ``mutual=True`` the sources receive
    the reciprocal contribution as well; the two slices must then be disjoint.

    Args:
        targets (Bodies): Bodies whose accumulators are updated.
        sources (Bodies): Bodies providing positions and charges.
        mutual (bool, optional): Also update the sources. Defaults to False.
    """
    if len(targets) == 0 or len(sources) == 0:
        return

    offsets = [
        sources.position[:, axis][None, :] - targets.position[:, axis][:, None] for axis in range(3)
    ]
    r2 = offsets[0] * offsets[0] + offsets[1] * offsets[1] + offsets[2] * offsets[2]
    inv_r = np.zeros_like(r2)
    np.divide(1.0, np.sqrt(r2), out=inv_r, where=r2 > 0.0)
    inv_r3 = inv_r * inv_r * inv_r

    targets.potential += inv_r @ sources.charge
    pulled = inv_r3 * sources.charge
    for axis, dx in enumerate(offsets):
        targets.force[:, axis] += np.einsum("ij,ij->i", pulled, dx)

    if mutual:
        sources.potential += targets.charge @ inv_r
        pushed = inv_r3 * targets.charge[:, None]
        for axis, dx in enumerate(offsets):
            sources.force[:, axis] -= np.einsum("ij,ij->j", pushed, dx)


def direct_sum(bodies, targets=None):
    """
    All-pairs reference potentials and forces.

    Args:
        bodies (Bodies): Source (and by default target) bodies.
        targets (np.ndarray, optional): Indices restricting which bodies are evaluated.

    Returns:
        tuple: ``(potential, force)`` for the selected targets.
    """
    indices = np.arange(len(bodies)) if targets is None else np.asarray(targets)
    scratch = Bodies.from_arrays(bodies.position[indices], bodies.charge[indices])
    for lo in range(0, len(indices), DIRECT_CHUNK):
        p2p(scratch[lo : lo + DIRECT_CHUNK], bodies)
    return scratch.potential, scratch.force
