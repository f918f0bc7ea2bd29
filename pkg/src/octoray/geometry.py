"""Voxel keys, rays, boxes, slab intersection and Amanatides-Woo traversal."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from octoray import _walk


class OutOfBoundsError(ValueError):
    """A point or key lies outside the mapped workspace."""


class AlignmentError(ValueError):
    """A key is not aligned to the lattice of the requested depth."""


class EmptyIntersectionError(ValueError):
    """A clipped traversal was requested for a box the ray never enters."""


class Label(str, Enum):
    OCCUPIED = "occupied"
    FREE = "free"
    UNKNOWN = "unknown"


class Point3(NamedTuple):
    x: float
    y: float
    z: float


class VoxelKey(NamedTuple):
    x: int
    y: int
    z: int


@dataclass(frozen=True)
class GridSpec:
    """Cubic workspace of ``2**max_depth`` voxels per axis starting at ``origin``."""

    resolution: float
    max_depth: int = 16
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if not 1 <= self.max_depth <= _walk.KEY_BITS:
            raise ValueError(f"max_depth must be in [1, {_walk.KEY_BITS}], got {self.max_depth}")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    @property
    def size(self) -> int:
        """Voxels per axis."""
        return 1 << self.max_depth

    @property
    def span(self) -> float:
        return self.resolution * self.size

    @classmethod
    def centered(cls, resolution: float, max_depth: int = 16, center=(0.0, 0.0, 0.0)) -> "GridSpec":
        half = resolution * (1 << max_depth) / 2
        return cls(resolution, max_depth, tuple(c - half for c in center))

    def origin_array(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=np.float64)

    def side(self, depth: int) -> int:
        """Side length in voxels of a node at ``depth``."""
        return 1 << (self.max_depth - depth)

    def contains_key(self, k) -> bool:
        return all(0 <= int(c) < self.size for c in k)


@dataclass(frozen=True)
class Ray:
    origin: Point3
    direction: Point3
    t_max: float
    range_limited: bool = False

    def __post_init__(self):
        o = Point3(*map(float, self.origin))
        d = Point3(*map(float, self.direction))
        if not all(math.isfinite(v) for v in (*o, *d, self.t_max)):
            raise ValueError("ray components must be finite")
        if abs(math.sqrt(d.x * d.x + d.y * d.y + d.z * d.z) - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, got {d}")
        if not self.t_max > 0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "t_max", float(self.t_max))

    @classmethod
    def between(cls, start, end) -> "Ray":
        """Ray from ``start`` towards ``end`` with length |end - start|."""
        v = [e - s for s, e in zip(start, end)]
        length = math.sqrt(sum(c * c for c in v))
        return cls(tuple(start), tuple(c / length for c in v), length)

    @property
    def endpoint(self) -> Point3:
        o, d, t = self.origin, self.direction, self.t_max
        return Point3(o.x + t * d.x, o.y + t * d.y, o.z + t * d.z)


@dataclass(frozen=True)
class Aabb:
    min: Point3
    max: Point3
    label: Label = Label.UNKNOWN
    depth: int = 0
    key: Optional[VoxelKey] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "min", Point3(*map(float, self.min)))
        object.__setattr__(self, "max", Point3(*map(float, self.max)))
        if not all(a < b for a, b in zip(self.min, self.max)):
            raise ValueError(f"degenerate box {self.min} .. {self.max}")

    @property
    def center(self) -> Point3:
        return Point3(*((a + b) / 2 for a, b in zip(self.min, self.max)))

    def contains(self, p) -> bool:
        """Half-open containment, consistent with key ownership of faces."""
        return all(lo <= c < hi for c, lo, hi in zip(p, self.min, self.max))


@dataclass
class Traversal:
    keys: list[VoxelKey]
    clipped: bool = False

    def __len__(self):
        return len(self.keys)

    def __iter__(self):
        return iter(self.keys)


def key_of_point(p, grid: GridSpec) -> VoxelKey:
    """Quantize a world point; faces belong to the voxel whose min corner touches them."""
    k = VoxelKey(*(math.floor((c - o) / grid.resolution) for c, o in zip(p, grid.origin)))
    if not grid.contains_key(k):
        raise OutOfBoundsError(f"point {tuple(p)} lies outside the workspace")
    return k


def aabb_of_key(k, depth: int, grid: GridSpec, label: Label = Label.UNKNOWN) -> Aabb:
    if not 0 <= depth <= grid.max_depth:
        raise ValueError(f"depth {depth} outside [0, {grid.max_depth}]")
    if not grid.contains_key(k):
        raise OutOfBoundsError(f"key {tuple(k)} outside the workspace")
    side = grid.side(depth)
    if any(int(c) % side for c in k):
        raise AlignmentError(f"key {tuple(k)} is not aligned to depth {depth} (side {side})")
    res = grid.resolution
    lo = tuple(o + int(c) * res for o, c in zip(grid.origin, k))
    hi = tuple(o + (int(c) + side) * res for o, c in zip(grid.origin, k))
    return Aabb(lo, hi, label, depth, VoxelKey(*map(int, k)))


def ray_aabb_intersect(r: Ray, b: Aabb) -> Optional[tuple[float, float]]:
    """Parametric overlap of the segment [0, t_max] with ``b``; None on miss or zero-measure contact."""
    t0, t1 = 0.0, r.t_max
    for o, d, lo, hi in zip(r.origin, r.direction, b.min, b.max):
        if d == 0.0:
            if o <= lo or o >= hi:
                return None
            continue
        ta = (lo - o) / d
        tb = (hi - o) / d
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    if t0 < t1:
        return t0, t1
    return None


def _ray_arrays(r: Ray):
    return np.asarray(r.origin, np.float64), np.asarray(r.direction, np.float64)


def _setup(r: Ray, grid: GridSpec):
    o, d = _ray_arrays(r)
    k0 = np.zeros(3, np.int64)
    ke = np.zeros(3, np.int64)
    span = np.zeros(2)
    flags = _walk.ray_setup(o, d, r.t_max, grid.origin_array(), grid.resolution, grid.size, k0, ke, span)
    return o, d, k0, ke, flags


def dda_traverse(r: Ray, grid: GridSpec) -> Traversal:
    """Every voxel the segment passes through, in entry order.

    Segments leaving the workspace are clipped at its boundary and flagged.
    """
    o, d, k0, ke, flags = _setup(r, grid)
    if flags & _walk.MISS:
        return Traversal([], clipped=True)
    out = np.empty((_walk.walk_length(k0, ke), 3), np.int64)
    n = _walk.full_walk(o, _walk.reciprocal(d), grid.origin_array(), grid.resolution, k0, ke, out)
    clipped = bool(flags & (_walk.CLIP_START | _walk.CLIP_END))
    return Traversal([VoxelKey(*map(int, row)) for row in out[:n]], clipped)


def box_key_bounds(b: Aabb, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Key-space [lo, hi) of a lattice-aligned box."""
    if b.key is not None:
        lo = np.asarray(b.key, np.int64)
        return lo, lo + grid.side(b.depth)
    lo = np.array([round((m - o) / grid.resolution) for m, o in zip(b.min, grid.origin)], np.int64)
    hi = np.array([round((m - o) / grid.resolution) for m, o in zip(b.max, grid.origin)], np.int64)
    return lo, hi


def dda_traverse_clipped(r: Ray, b: Aabb, grid: GridSpec) -> list[VoxelKey]:
    """The keys of :func:`dda_traverse` that lie inside ``b``, in traversal order."""
    o, d, k0, ke, flags = _setup(r, grid)
    if flags & _walk.MISS:
        raise EmptyIntersectionError("segment does not meet the workspace")
    lo, hi = box_key_bounds(b, grid)
    out = np.empty((_walk.walk_length(k0, ke), 3), np.int64)
    n = _walk.clipped_walk(o, _walk.reciprocal(d), grid.origin_array(), grid.resolution, k0, ke, lo[None], hi[None], 0, out)
    if n == 0:
        raise EmptyIntersectionError(f"ray does not traverse box {b.min}..{b.max}")
    return [VoxelKey(*map(int, row)) for row in out[:n]]
