"""
Particle sets, bounding boxes and local Morton keys.

Random numbers come from ``numpy.random.default_rng(seed)`` (the PCG64 bit
generator), so a fixed ``(kind, n, seed)`` always yields bitwise-identical
bodies on the same numpy release.
"""

import math

import attrs
import numpy as np

from utils.errors import ConfigurationError, DomainError

DISTRIBUTIONS = ("cube", "sphere", "plummer")

MAX_LEVEL = 21

# Relative inflation applied to local bounds before keys are computed
BOUNDS_EPSILON = 1e-6

PLUMMER_SCALE = 0.1
PLUMMER_CUTOFF = 10.0 * PLUMMER_SCALE


def _finite_vector(instance, attribute, value):
    if len(value) != 3 or not all(math.isfinite(v) for v in value):
        raise ValueError(f"{attribute.name} must be a finite 3-vector, got {value}")


def _to_vector(value):
    return tuple(float(v) for v in value)


@attrs.frozen
class Body:
    """A single particle, as read back from a :class:`Bodies` container."""

    position: tuple = attrs.field(converter=_to_vector, validator=_finite_vector)
    charge: float = attrs.field(converter=float)
    potential: float = attrs.field(converter=float, default=0.0)
    force: tuple = attrs.field(converter=_to_vector, default=(0.0, 0.0, 0.0))
    weight: float = attrs.field(
        converter=float, default=1.0, validator=attrs.validators.ge(0.0)
    )
    id: int = attrs.field(converter=int, default=0)


@attrs.frozen
class Box:
    """Axis-aligned box; ``min`` and ``max`` are 3-tuples with min <= max componentwise."""

    min: tuple = attrs.field(converter=_to_vector, validator=_finite_vector)
    max: tuple = attrs.field(converter=_to_vector, validator=_finite_vector)

    def __attrs_post_init__(self):
        if any(lo > hi for lo, hi in zip(self.min, self.max)):
            raise DomainError(f"Box min {self.min} exceeds max {self.max}")

    @property
    def lo(self):
        return np.array(self.min)

    @property
    def hi(self):
        return np.array(self.max)

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def extent(self):
        return self.hi - self.lo

    @property
    def half_extent(self):
        return 0.5 * self.extent

    @property
    def radius(self):
        """Half of the box diagonal."""
        return float(np.linalg.norm(self.half_extent))

    @property
    def longest_axis(self):
        return int(np.argmax(self.extent))

    def expanded(self, eps=BOUNDS_EPSILON):
        """Inflate the box by ``eps`` times its largest extent on every side."""
        scale = float(self.extent.max())
        if scale == 0.0:
            scale = max(1.0, float(np.abs(np.concatenate([self.lo, self.hi])).max()))
        pad = eps * scale
        return Box(self.lo - pad, self.hi + pad)

    def contains(self, point):
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    def distance_to_point(self, point):
        """Distance from ``point`` to the closest point of the box (0 inside)."""
        return float(self.distance_to_points(point)[0])

    def distance_to_points(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        return np.linalg.norm(points - np.clip(points, self.lo, self.hi), axis=1)

    def with_max(self, axis, value):
        hi = list(self.max)
        hi[axis] = value
        return Box(self.min, hi)

    def with_min(self, axis, value):
        lo = list(self.min)
        lo[axis] = value
        return Box(lo, self.max)


@attrs.frozen(order=True)
class MortonKey:
    """Bit-interleaved octant path; only the low ``3 * level`` bits are significant."""

    value: int = attrs.field(converter=int)
    level: int = attrs.field(
        converter=int,
        validator=[attrs.validators.ge(0), attrs.validators.le(MAX_LEVEL)],
    )

    def parent(self):
        if self.level == 0:
            raise DomainError("The root key has no parent")
        return MortonKey(self.value >> 3, self.level - 1)

    def child(self, octant):
        return MortonKey((self.value << 3) | int(octant), self.level + 1)


def _array_field(dtype, ndim):
    def convert(value):
        array = np.asarray(value, dtype=dtype)
        if ndim == 2:
            array = array.reshape(-1, 3)
        return array

    return attrs.field(converter=convert, eq=False)


@attrs.define(eq=False)
class Bodies:
    """
    Struct-of-arrays particle container.

    Slicing with a ``slice`` returns views, so kernels can accumulate into
    ``potential`` and ``force`` of a sub-range in place.
    """

    position: np.ndarray = _array_field(np.float64, 2)
    charge: np.ndarray = _array_field(np.float64, 1)
    potential: np.ndarray = _array_field(np.float64, 1)
    force: np.ndarray = _array_field(np.float64, 2)
    weight: np.ndarray = _array_field(np.float64, 1)
    id: np.ndarray = _array_field(np.int64, 1)

    @classmethod
    def from_arrays(cls, position, charge, ids=None, weight=None):
        position = np.asarray(position, dtype=np.float64).reshape(-1, 3)
        n = len(position)
        return cls(
            position=position,
            charge=np.asarray(charge, dtype=np.float64),
            potential=np.zeros(n),
            force=np.zeros((n, 3)),
            weight=np.ones(n) if weight is None else weight,
            id=np.arange(n) if ids is None else ids,
        )

    @classmethod
    def empty(cls):
        return cls.from_arrays(np.zeros((0, 3)), np.zeros(0))

    @classmethod
    def concatenate(cls, parts):
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(
            position=np.concatenate([p.position for p in parts]),
            charge=np.concatenate([p.charge for p in parts]),
            potential=np.concatenate([p.potential for p in parts]),
            force=np.concatenate([p.force for p in parts]),
            weight=np.concatenate([p.weight for p in parts]),
            id=np.concatenate([p.id for p in parts]),
        )

    def __len__(self):
        return len(self.charge)

    def __getitem__(self, index):
        return Bodies(
            position=self.position[index],
            charge=self.charge[index],
            potential=self.potential[index],
            force=self.force[index],
            weight=self.weight[index],
            id=self.id[index],
        )

    def take(self, indices):
        """Copy of the bodies at ``indices`` (integer array or boolean mask)."""
        return self[np.asarray(indices)]

    def copy(self):
        return self[np.arange(len(self))]

    def body(self, i):
        return Body(
            position=self.position[i],
            charge=self.charge[i],
            potential=self.potential[i],
            force=self.force[i],
            weight=self.weight[i],
            id=self.id[i],
        )

    def reset_accumulators(self):
        self.potential[:] = 0.0
        self.force[:] = 0.0


def _sample_cube(rng, n):
    return rng.random((n, 3))


def _sample_sphere(rng, n):
    directions = rng.standard_normal((n, 3))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def _sample_plummer(rng, n, scale=PLUMMER_SCALE, cutoff=PLUMMER_CUTOFF):
    """Inverse-transform Plummer radii, rejection-clipped to ``cutoff``, isotropic angles."""
    radii = np.empty(0)
    while len(radii) < n:
        u = rng.random(n)
        u = u[u > 0.0]
        r = scale / np.sqrt(u ** (-2.0 / 3.0) - 1.0)
        radii = np.concatenate([radii, r[r <= cutoff]])
    radii = radii[:n]

    cos_theta = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    sin_theta = np.sqrt(1.0 - cos_theta**2)
    return radii[:, None] * np.stack(
        [sin_theta * np.cos(phi), sin_theta * np.sin(phi), cos_theta], axis=1
    )


_SAMPLERS = {
    "cube": _sample_cube,
    "sphere": _sample_sphere,
    "plummer": _sample_plummer,
}


def generate(kind, n, seed):
    """
    Generate one of the benchmark particle distributions.

    Args:
        kind (str): One of ``"cube"``, ``"sphere"`` or ``"plummer"``.
        n (int): Number of bodies, at least 1.
        seed (int): Seed for the PCG64 generator.

    Returns:
        Bodies: Charge ``1/n``, zero accumulators, unit weights and ids ``0..n-1``.

    Raises:
        ConfigurationError: If ``kind`` is unknown or ``n < 1``.
    """
    if kind not in _SAMPLERS:
        raise ConfigurationError(
            f"Unknown distribution '{kind}'. Expected one of {', '.join(DISTRIBUTIONS)}"
        )
    if n < 1:
        raise ConfigurationError(f"n must be at least 1, got {n}")

    rng = np.random.default_rng(seed)
    position = _SAMPLERS[kind](rng, n)
    return Bodies.from_arrays(position, np.full(n, 1.0 / n))


def global_bounds(positions):
    """
    Smallest axis-aligned box containing every position.

    Args:
        positions: ``(n, 3)`` array or a :class:`Bodies` container.

    Raises:
        DomainError: If there are no positions.
    """
    if isinstance(positions, Bodies):
        positions = positions.position
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(positions) == 0:
        raise DomainError("Cannot bound an empty set of bodies")
    return Box(positions.min(axis=0), positions.max(axis=0))


def _cell_coordinates(positions, bounds, level):
    box = bounds.expanded()
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if np.any(positions < box.lo) or np.any(positions > box.hi):
        raise DomainError(f"Position outside local bounds {bounds}")
    unit = (positions - box.lo) / box.extent
    cells = np.floor(unit * float(1 << level)).astype(np.int64)
    return np.clip(cells, 0, (1 << level) - 1).astype(np.uint64)


def _interleave(cells, level):
    keys = np.zeros(len(cells), dtype=np.uint64)
    for bit in range(level):
        for axis in range(3):
            digit = (cells[:, axis] >> np.uint64(bit)) & np.uint64(1)
            keys |= digit << np.uint64(3 * bit + axis)
    return keys


def local_keys(positions, bounds, level=MAX_LEVEL):
    """Vectorised :func:`local_key`; returns the raw uint64 key values."""
    if not 0 <= level <= MAX_LEVEL:
        raise DomainError(f"level must be within 0..{MAX_LEVEL}, got {level}")
    return _interleave(_cell_coordinates(positions, bounds, level), level)


def local_key(position, bounds, level):
    """
    Morton key of ``position`` relative to the local partition ``bounds``.

    The octant digit at each level is ``x | y << 1 | z << 2``.

    Raises:
        DomainError: If the position lies outside the epsilon-expanded bounds.
    """
    return MortonKey(int(local_keys(position, bounds, level)[0]), level)
