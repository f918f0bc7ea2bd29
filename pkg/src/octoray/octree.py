"""Log-odds occupancy octree stored as a flat node pool.

Nodes live in parallel arrays. Index 0 is the root; children are allocated in
contiguous blocks of eight, and a block is returned to a free list when its
parent is pruned. Leaves carry the evidence; inner nodes carry the maximum of
their existing children. A missing child means unknown space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple

import numpy as np
from numba import njit

from octoray.geometry import GridSpec, Label, OutOfBoundsError, VoxelKey

# leaf_arrays() kinds
STORED = 0
UNKNOWN_REGION = 1

# classify() codes, also used in LeafAabbSet.labels
UNKNOWN = 0
FREE = 1
OCCUPIED = 2

LABEL_OF_CODE = {UNKNOWN: Label.UNKNOWN, FREE: Label.FREE, OCCUPIED: Label.OCCUPIED}


class Observation(Enum):
    HIT = "hit"
    MISS = "miss"


@dataclass(frozen=True)
class OccupancyParams:
    l_hit: float = math.log(0.7 / 0.3)
    l_miss: float = math.log(0.4 / 0.6)
    l_min: float = -2.0
    l_max: float = 3.5
    occ_threshold: float = 0.0
    free_threshold: float = 0.0

    def __post_init__(self):
        if not self.l_min < self.free_threshold <= self.occ_threshold < self.l_max:
            raise ValueError("need l_min < free_threshold <= occ_threshold < l_max")
        if not self.l_hit > 0 > self.l_miss:
            raise ValueError("need l_hit > 0 > l_miss")

    def clamp(self, v: float) -> float:
        return min(max(v, self.l_min), self.l_max)

    def label_code(self, v: float) -> int:
        if v >= self.occ_threshold:
            return OCCUPIED
        if v <= self.free_threshold:
            return FREE
        return UNKNOWN


class LeafCell(NamedTuple):
    key: VoxelKey
    depth: int
    label: Label


@njit(cache=True)
def _alloc_block(child, alive, free_stack, meta):
    if meta[1] > 0:
        meta[1] -= 1
        blk = free_stack[meta[1]]
    else:
        blk = meta[0]
        meta[0] += 8
    return blk


@njit(cache=True)
def _refresh_inner(val, child, alive, node):
    blk = child[node]
    m = -np.inf
    for j in range(8):
        if alive[blk + j] and val[blk + j] > m:
            m = val[blk + j]
    val[node] = m


@njit(cache=True)
def _update_batch(val, child, alive, free_stack, meta, keys, deltas, start, lmin, lmax, max_depth):
    """Apply ``deltas[i]`` to the leaf at ``keys[i]`` from ``start`` on.

    Stops early when the pool might overflow; returns the next index to process.
    """
    cap = val.shape[0]
    path = np.empty(max_depth + 1, np.int64)
    n = keys.shape[0]
    i = start
    while i < n:
        if meta[0] + 8 * max_depth > cap:
            return i
        x = keys[i, 0]
        y = keys[i, 1]
        z = keys[i, 2]
        created = False
        if not alive[0]:
            alive[0] = True
            val[0] = 0.0
            child[0] = -1
            created = True
        node = 0
        path[0] = 0
        for dep in range(max_depth):
            bit = max_depth - 1 - dep
            ci = ((x >> bit) & 1) | (((y >> bit) & 1) << 1) | (((z >> bit) & 1) << 2)
            if child[node] < 0:
                blk = _alloc_block(child, alive, free_stack, meta)
                child[node] = blk
                if created:
                    for j in range(8):
                        alive[blk + j] = False
                        child[blk + j] = -1
                else:
                    # pruned leaf: expand into eight copies of itself
                    for j in range(8):
                        alive[blk + j] = True
                        child[blk + j] = -1
                        val[blk + j] = val[node]
            c = child[node] + ci
            if not alive[c]:
                alive[c] = True
                val[c] = 0.0
                child[c] = -1
                created = True
            else:
                created = False
            path[dep + 1] = c
            node = c
        v = val[node] + deltas[i]
        if v < lmin:
            v = lmin
        elif v > lmax:
            v = lmax
        val[node] = v
        for dep in range(max_depth - 1, -1, -1):
            _refresh_inner(val, child, alive, path[dep])
        i += 1
    return i


@njit(cache=True)
def _preorder(child, alive, n_used):
    order = np.empty(max(n_used, 1), np.int64)
    if not alive[0]:
        return order[:0]
    stack = np.empty(max(n_used, 1), np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    n = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        order[n] = node
        n += 1
        blk = child[node]
        if blk >= 0:
            for j in range(7, -1, -1):
                if alive[blk + j]:
                    stack[sp] = blk + j
                    sp += 1
    return order[:n]


@njit(cache=True)
def _prune(val, child, alive, free_stack, meta):
    order = _preorder(child, alive, meta[0])
    merged = 0
    for idx in range(order.shape[0] - 1, -1, -1):
        node = order[idx]
        blk = child[node]
        if blk < 0:
            continue
        ok = True
        v0 = val[blk]
        for j in range(8):
            c = blk + j
            if not alive[c] or child[c] >= 0 or val[c] != v0:
                ok = False
                break
        if ok:
            for j in range(8):
                alive[blk + j] = False
            free_stack[meta[1]] = blk
            meta[1] += 1
            child[node] = -1
            val[node] = v0
            merged += 1
    return merged


@njit(cache=True)
def _leaves(val, child, alive, n_used, max_depth, keys, depths, values, kinds):
    """Depth-first enumeration of stored leaves and maximal unknown regions."""
    n = 0
    if not alive[0]:
        keys[0, 0] = 0
        keys[0, 1] = 0
        keys[0, 2] = 0
        depths[0] = 0
        values[0] = 0.0
        kinds[0] = UNKNOWN_REGION
        return 1
    cap = max(n_used, 1) + 8
    s_node = np.empty(cap, np.int64)
    s_dep = np.empty(cap, np.int64)
    s_key = np.empty((cap, 3), np.int64)
    sp = 0
    s_node[0] = 0
    s_dep[0] = 0
    s_key[0, 0] = 0
    s_key[0, 1] = 0
    s_key[0, 2] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = s_node[sp]
        dep = s_dep[sp]
        kx = s_key[sp, 0]
        ky = s_key[sp, 1]
        kz = s_key[sp, 2]
        if node < 0 or child[node] < 0:
            keys[n, 0] = kx
            keys[n, 1] = ky
            keys[n, 2] = kz
            depths[n] = dep
            if node < 0:
                values[n] = 0.0
                kinds[n] = UNKNOWN_REGION
            else:
                values[n] = val[node]
                kinds[n] = STORED
            n += 1
            continue
        blk = child[node]
        half = np.int64(1) << (max_depth - dep - 1)
        # push in reverse so children pop in index order; -1 marks an unknown slot
        for j in range(7, -1, -1):
            s_node[sp] = blk + j if alive[blk + j] else -1
            s_dep[sp] = dep + 1
            s_key[sp, 0] = kx + (j & 1) * half
            s_key[sp, 1] = ky + ((j >> 1) & 1) * half
            s_key[sp, 2] = kz + ((j >> 2) & 1) * half
            sp += 1
    return n


@njit(cache=True)
def _lookup(val, child, alive, max_depth, x, y, z, out):
    """Find the deepest existing node covering the key; out = (value, depth)."""
    if not alive[0]:
        return False
    node = 0
    for dep in range(max_depth):
        blk = child[node]
        if blk < 0:
            out[0] = val[node]
            out[1] = dep
            return True
        bit = max_depth - 1 - dep
        ci = ((x >> bit) & 1) | (((y >> bit) & 1) << 1) | (((z >> bit) & 1) << 2)
        c = blk + ci
        if not alive[c]:
            return False
        node = c
    out[0] = val[node]
    out[1] = max_depth
    return True


@njit(cache=True)
def _classify_batch(val, child, alive, max_depth, keys, occ_thr, free_thr, out):
    tmp = np.zeros(2)
    for i in range(keys.shape[0]):
        if _lookup(val, child, alive, max_depth, keys[i, 0], keys[i, 1], keys[i, 2], tmp):
            v = tmp[0]
            if v >= occ_thr:
                out[i] = OCCUPIED
            elif v <= free_thr:
                out[i] = FREE
            else:
                out[i] = UNKNOWN
        else:
            out[i] = UNKNOWN


@njit(cache=True)
def _region_batch(val, child, alive, max_depth, keys, occ_thr, free_thr, codes, depths):
    """Label code and depth of the leaf or unknown region covering each key."""
    for i in range(keys.shape[0]):
        x, y, z = keys[i, 0], keys[i, 1], keys[i, 2]
        codes[i] = UNKNOWN
        depths[i] = 0
        if not alive[0]:
            continue
        node = 0
        dep = 0
        while dep < max_depth:
            blk = child[node]
            if blk < 0:
                break
            bit = max_depth - 1 - dep
            c = blk + (((x >> bit) & 1) | (((y >> bit) & 1) << 1) | (((z >> bit) & 1) << 2))
            dep += 1
            if not alive[c]:
                node = -1
                break
            node = c
        depths[i] = dep
        if node >= 0:
            v = val[node]
            if v >= occ_thr:
                codes[i] = OCCUPIED
            elif v <= free_thr:
                codes[i] = FREE


@njit(cache=True)
def _insert_leaves(val, child, alive, free_stack, meta, keys, depths, values, max_depth):
    """Rebuild structure from leaf records; returns -1 on success or the bad record index."""
    for i in range(keys.shape[0]):
        if meta[0] + 8 * max_depth > val.shape[0]:
            return -2 - i
        x = keys[i, 0]
        y = keys[i, 1]
        z = keys[i, 2]
        target = depths[i]
        if not alive[0]:
            if i > 0 and target == 0:
                return i
            alive[0] = True
            child[0] = -1
            val[0] = 0.0
            fresh = True
        else:
            fresh = False
            if target == 0 or child[0] < 0:
                return i
        node = 0
        for dep in range(target):
            bit = max_depth - 1 - dep
            ci = ((x >> bit) & 1) | (((y >> bit) & 1) << 1) | (((z >> bit) & 1) << 2)
            if child[node] < 0:
                if not fresh:
                    return i
                blk = _alloc_block(child, alive, free_stack, meta)
                child[node] = blk
                for j in range(8):
                    alive[blk + j] = False
                    child[blk + j] = -1
            c = child[node] + ci
            if alive[c]:
                if dep + 1 == target or child[c] < 0:
                    return i
                fresh = False
            else:
                alive[c] = True
                child[c] = -1
                val[c] = 0.0
                fresh = True
            node = c
        val[node] = values[i]
    order = _preorder(child, alive, meta[0])
    for idx in range(order.shape[0] - 1, -1, -1):
        node = order[idx]
        if child[node] >= 0:
            _refresh_inner(val, child, alive, node)
    return -1


class OccupancyOctree:
    """Probabilistic occupancy octree over a :class:`GridSpec` workspace."""

    def __init__(self, grid: GridSpec, params: OccupancyParams | None = None, capacity: int = 1 << 12):
        self.grid = grid
        self.params = params or OccupancyParams()
        capacity = max(int(capacity), 8 * grid.max_depth + 9)
        self._val = np.zeros(capacity, np.float64)
        self._child = np.full(capacity, -1, np.int32)
        self._alive = np.zeros(capacity, np.bool_)
        self._free = np.zeros(capacity // 8 + 1, np.int64)
        # meta[0]: next unallocated slot, meta[1]: free-list depth
        self._meta = np.array([1, 0], np.int64)

    # pool management -------------------------------------------------

    def _grow(self, minimum: int):
        cap = self._val.shape[0]
        new = max(cap * 2, minimum)
        self._val = np.concatenate([self._val, np.zeros(new - cap)])
        self._child = np.concatenate([self._child, np.full(new - cap, -1, np.int32)])
        self._alive = np.concatenate([self._alive, np.zeros(new - cap, np.bool_)])
        self._free = np.concatenate([self._free, np.zeros(new // 8 + 1 - self._free.shape[0], np.int64)])

    def copy(self) -> "OccupancyOctree":
        t = OccupancyOctree.__new__(OccupancyOctree)
        t.grid, t.params = self.grid, self.params
        t._val, t._child, t._alive = self._val.copy(), self._child.copy(), self._alive.copy()
        t._free, t._meta = self._free.copy(), self._meta.copy()
        return t

    @property
    def is_empty(self) -> bool:
        return not self._alive[0]

    def node_count(self) -> int:
        return int(self._alive[: self._meta[0]].sum())

    # updates ---------------------------------------------------------

    def _check_keys(self, keys: np.ndarray) -> np.ndarray:
        keys = np.ascontiguousarray(keys, dtype=np.int64).reshape(-1, 3)
        if keys.size and (keys.min() < 0 or keys.max() >= self.grid.size):
            raise OutOfBoundsError("key outside the workspace")
        return keys

    def apply_deltas(self, keys: np.ndarray, deltas: np.ndarray) -> None:
        """Add ``deltas[i]`` to voxel ``keys[i]`` in order, clamping after each update."""
        keys = self._check_keys(keys)
        deltas = np.ascontiguousarray(deltas, dtype=np.float64)
        p, depth = self.params, self.grid.max_depth
        i = 0
        while i < keys.shape[0]:
            i = _update_batch(self._val, self._child, self._alive, self._free, self._meta,
                              keys, deltas, i, p.l_min, p.l_max, depth)
            if i < keys.shape[0]:
                self._grow(self._val.shape[0] + 8 * depth * 64)

    def update_voxel(self, k, observation: Observation | bool) -> float:
        """Record one observation at finest-resolution key ``k``; returns the new log-odds."""
        hit = observation is Observation.HIT or observation is True
        delta = self.params.l_hit if hit else self.params.l_miss
        self.apply_deltas(np.asarray([k]), np.asarray([delta]))
        return self.log_odds(k)

    def prune(self) -> int:
        """Merge every node whose eight children are identical leaves; returns merge count."""
        return int(_prune(self._val, self._child, self._alive, self._free, self._meta))

    # queries ---------------------------------------------------------

    def _find(self, k):
        if not self.grid.contains_key(k):
            return None
        out = np.zeros(2)
        if _lookup(self._val, self._child, self._alive, self.grid.max_depth, int(k[0]), int(k[1]), int(k[2]), out):
            return float(out[0]), int(out[1])
        return None

    def log_odds(self, k) -> float | None:
        """Log-odds of the leaf covering ``k``, or None for unknown space."""
        found = self._find(k)
        return None if found is None else found[0]

    def classify(self, k) -> Label:
        found = self._find(k)
        if found is None:
            return Label.UNKNOWN
        return LABEL_OF_CODE[self.params.label_code(found[0])]

    def classify_many(self, keys) -> np.ndarray:
        """Vectorised classify returning UNKNOWN/FREE/OCCUPIED codes."""
        keys = np.ascontiguousarray(keys, dtype=np.int64).reshape(-1, 3)
        out = np.zeros(keys.shape[0], np.int8)
        inside = np.all((keys >= 0) & (keys < self.grid.size), axis=1)
        sub = np.zeros(int(inside.sum()), np.int8)
        _classify_batch(self._val, self._child, self._alive, self.grid.max_depth, keys[inside],
                        self.params.occ_threshold, self.params.free_threshold, sub)
        out[inside] = sub
        return out

    def regions_many(self, keys) -> tuple[np.ndarray, np.ndarray]:
        """(label codes, depths) of the leaf or unknown region covering each in-workspace key."""
        keys = np.ascontiguousarray(keys, dtype=np.int64).reshape(-1, 3)
        codes = np.zeros(keys.shape[0], np.int8)
        depths = np.zeros(keys.shape[0], np.int64)
        _region_batch(self._val, self._child, self._alive, self.grid.max_depth, keys,
                      self.params.occ_threshold, self.params.free_threshold, codes, depths)
        return codes, depths

    def leaf_arrays(self):
        """Depth-first partition of the workspace.

        Returns (keys, depths, values, kinds): one row per stored leaf
        (kind STORED) or maximal unknown region (kind UNKNOWN_REGION).
        """
        cap = int(self._meta[0]) + 8
        keys = np.empty((cap, 3), np.int64)
        depths = np.empty(cap, np.int64)
        values = np.empty(cap, np.float64)
        kinds = np.empty(cap, np.int8)
        n = _leaves(self._val, self._child, self._alive, int(self._meta[0]), self.grid.max_depth,
                    keys, depths, values, kinds)
        return keys[:n], depths[:n], values[:n], kinds[:n]

    def leaf_labels(self, values: np.ndarray, kinds: np.ndarray) -> np.ndarray:
        p = self.params
        codes = np.where(values >= p.occ_threshold, OCCUPIED,
                         np.where(values <= p.free_threshold, FREE, UNKNOWN)).astype(np.int8)
        codes[kinds == UNKNOWN_REGION] = UNKNOWN
        return codes

    def leaf_cells(self) -> list[LeafCell]:
        keys, depths, values, kinds = self.leaf_arrays()
        codes = self.leaf_labels(values, kinds)
        return [LeafCell(VoxelKey(*map(int, k)), int(d), LABEL_OF_CODE[int(c)])
                for k, d, c in zip(keys, depths, codes)]

    def stored_leaves(self):
        """(keys, depths, values) of leaves that carry evidence, depth-first."""
        keys, depths, values, kinds = self.leaf_arrays()
        m = kinds == STORED
        return keys[m], depths[m], values[m]

    def leaf_count(self) -> int:
        return int(self.leaf_arrays()[0].shape[0])

    @classmethod
    def from_leaves(cls, grid: GridSpec, params: OccupancyParams, keys, depths, values) -> "OccupancyOctree":
        """Rebuild a tree from stored-leaf records; raises ValueError on inconsistent records."""
        keys = np.ascontiguousarray(keys, dtype=np.int64).reshape(-1, 3)
        depths = np.ascontiguousarray(depths, dtype=np.int64)
        values = np.ascontiguousarray(values, dtype=np.float64)
        if keys.shape[0]:
            if depths.min() < 0 or depths.max() > grid.max_depth:
                raise ValueError("leaf depth outside [0, max_depth]")
            if keys.min() < 0 or keys.max() >= grid.size:
                raise ValueError("leaf key outside the workspace")
            side = np.left_shift(1, grid.max_depth - depths)
            if np.any(keys % side[:, None]):
                raise ValueError("leaf key not aligned to its depth")
            if not np.all(np.isfinite(values)) or values.min() < params.l_min or values.max() > params.l_max:
                raise ValueError("leaf log-odds outside clamping bounds")
        tree = cls(grid, params, capacity=max(1 << 12, 8 * grid.max_depth * (keys.shape[0] + 2)))
        status = _insert_leaves(tree._val, tree._child, tree._alive, tree._free, tree._meta,
                                keys, depths, values, grid.max_depth)
        if status != -1:
            raise ValueError(f"overlapping or inconsistent leaf record #{status}")
        return tree

    def __eq__(self, other):
        if not isinstance(other, OccupancyOctree):
            return NotImplemented
        a, b = self.stored_leaves(), other.stored_leaves()
        return (self.grid == other.grid and self.params == other.params
                and all(np.array_equal(x, y) for x, y in zip(a, b)))

    def __repr__(self):
        return f"OccupancyOctree(nodes={self.node_count()}, grid={self.grid})"


class RegionDiff(NamedTuple):
    key: VoxelKey
    depth: int
    label_a: Label
    label_b: Label


def classification_diff(a: "OccupancyOctree", b: "OccupancyOctree") -> list[RegionDiff]:
    """Maximal aligned regions whose classification differs between two trees on one grid.

    Walks the common refinement of both leaf partitions: a region of one tree is
    compared directly wherever the other tree is uniform over it.
    """
    if a.grid != b.grid:
        raise ValueError("trees live on different grids")
    out = []
    for first, second, strict in ((a, b, False), (b, a, True)):
        keys, depths, values, kinds = first.leaf_arrays()
        labels = first.leaf_labels(values, kinds)
        other, other_depth = second.regions_many(keys)
        # the other tree is uniform over this region when its covering region is no deeper;
        # equal depths are counted once, from the first pass
        uniform = other_depth < depths if strict else other_depth <= depths
        diff = uniform & (other != labels)
        for i in np.flatnonzero(diff):
            la, lb = LABEL_OF_CODE[int(labels[i])], LABEL_OF_CODE[int(other[i])]
            if first is b:
                la, lb = lb, la
            out.append(RegionDiff(VoxelKey(*map(int, keys[i])), int(depths[i]), la, lb))
    out.sort(key=lambda r: (r.key, r.depth))
    return out


def iter_all_keys(grid: GridSpec) -> Iterable[VoxelKey]:
    """Every key of a (toy) grid in lexicographic order."""
    n = grid.size
    for x in range(n):
        for y in range(n):
            for z in range(n):
                yield VoxelKey(x, y, z)
