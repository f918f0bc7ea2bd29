"""Binary BVH over axis-aligned boxes, rebuilt from scratch for every scan."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from octoray import _walk
from octoray.geometry import Aabb, Ray

STACK_CAPACITY = 64

# packet_candidates status codes
STACK_OVERFLOW = -1
HIT_OVERFLOW = -2


class BvhError(ValueError):
    pass


@njit(cache=True)
def _bounds(order, start, end, pmin, pmax, out_min, out_max, node):
    for a in range(3):
        out_min[node, a] = np.inf
        out_max[node, a] = -np.inf
    for i in range(start, end):
        p = order[i]
        for a in range(3):
            if pmin[p, a] < out_min[node, a]:
                out_min[node, a] = pmin[p, a]
            if pmax[p, a] > out_max[node, a]:
                out_max[node, a] = pmax[p, a]


@njit(cache=True)
def _area(mn, mx):
    dx = mx[0] - mn[0]
    dy = mx[1] - mn[1]
    dz = mx[2] - mn[2]
    return dx * dy + dy * dz + dz * dx


@njit(cache=True)
def _sah_split(order, start, end, pmin, pmax, cen):
    """Best (axis, split position) by a full sweep; the segment is left sorted on that axis."""
    n = end - start
    best_cost = np.inf
    best_axis = 0
    best_mid = start + n // 2
    left_area = np.empty(n)
    seg = order[start:end].copy()
    for a in range(3):
        idx = seg[np.argsort(cen[seg, a], kind="mergesort")]
        mn = np.full(3, np.inf)
        mx = np.full(3, -np.inf)
        for i in range(n):
            p = idx[i]
            for b in range(3):
                mn[b] = min(mn[b], pmin[p, b])
                mx[b] = max(mx[b], pmax[p, b])
            left_area[i] = _area(mn, mx)
        mn[:] = np.inf
        mx[:] = -np.inf
        for i in range(n - 1, 0, -1):
            p = idx[i]
            for b in range(3):
                mn[b] = min(mn[b], pmin[p, b])
                mx[b] = max(mx[b], pmax[p, b])
            cost = left_area[i - 1] * i + _area(mn, mx) * (n - i)
            if cost < best_cost:
                best_cost = cost
                best_axis = a
                best_mid = start + i
    order[start:end] = seg[np.argsort(cen[seg, best_axis], kind="mergesort")]
    return best_mid


@njit(cache=True, inline="always")
def _less(ce, order, i, j, axis):
    # ties broken by primitive index so the split is a deterministic total order
    return ce[i, axis] < ce[j, axis] or (ce[i, axis] == ce[j, axis] and order[i] < order[j])


@njit(cache=True, inline="always")
def _swap(ce, order, i, j):
    order[i], order[j] = order[j], order[i]
    for a in range(3):
        ce[i, a], ce[j, a] = ce[j, a], ce[i, a]


@njit(cache=True)
def _select(order, ce, lo, hi, k, axis):
    """Reorder slots lo..hi-1 so slot k holds its sorted element and smaller keys precede it.

    ``ce`` holds the centroids permuted in lockstep with ``order`` so scans stay sequential.
    """
    hi -= 1
    while hi > lo:
        m = lo + (hi - lo) // 2
        # median of three moved to hi as the pivot
        if _less(ce, order, m, lo, axis):
            _swap(ce, order, m, lo)
        if _less(ce, order, hi, lo, axis):
            _swap(ce, order, hi, lo)
        if _less(ce, order, m, hi, axis):
            _swap(ce, order, m, hi)
        pk = ce[hi, axis]
        po = order[hi]
        store = lo
        for i in range(lo, hi):
            c = ce[i, axis]
            if c < pk or (c == pk and order[i] < po):
                if i != store:
                    _swap(ce, order, i, store)
                store += 1
        _swap(ce, order, store, hi)
        if store == k:
            return
        if store < k:
            lo = store + 1
        else:
            hi = store - 1


@njit(cache=True)
def _build(pmin, pmax, leaf_capacity, use_sah, bmin, bmax, left, right, start, count, order):
    n = pmin.shape[0]
    cen = (pmin + pmax) * 0.5
    ce = cen.copy()
    for i in range(n):
        order[i] = i
    s_node = np.empty(2 * n + 1, np.int64)
    s_lo = np.empty(2 * n + 1, np.int64)
    s_hi = np.empty(2 * n + 1, np.int64)
    s_node[0] = 0
    s_lo[0] = 0
    s_hi[0] = n
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = s_node[sp]
        lo = s_lo[sp]
        hi = s_hi[sp]
        left[node] = -1
        right[node] = -1
        if hi - lo <= leaf_capacity:
            start[node] = lo
            count[node] = hi - lo
            _bounds(order, lo, hi, pmin, pmax, bmin, bmax, node)
            continue
        start[node] = 0
        count[node] = 0
        if use_sah:
            mid = _sah_split(order, lo, hi, pmin, pmax, cen)
            for i in range(lo, hi):
                for a in range(3):
                    ce[i, a] = cen[order[i], a]
        else:
            cmin = np.full(3, np.inf)
            cmax = np.full(3, -np.inf)
            for i in range(lo, hi):
                for a in range(3):
                    cmin[a] = min(cmin[a], ce[i, a])
                    cmax[a] = max(cmax[a], ce[i, a])
            axis = 0
            for a in range(1, 3):
                if cmax[a] - cmin[a] > cmax[axis] - cmin[axis]:
                    axis = a
            mid = lo + (hi - lo) // 2
            _select(order, ce, lo, hi, mid, axis)
        l_node = n_nodes
        r_node = n_nodes + 1
        n_nodes += 2
        left[node] = l_node
        right[node] = r_node
        # right pushed first so the left subtree is finished first
        s_node[sp] = r_node
        s_lo[sp] = mid
        s_hi[sp] = hi
        sp += 1
        s_node[sp] = l_node
        s_lo[sp] = lo
        s_hi[sp] = mid
        sp += 1
    # children are always numbered after their parent, so a reverse sweep fills internal bounds
    for node in range(n_nodes - 1, -1, -1):
        if left[node] >= 0:
            l_node = left[node]
            r_node = right[node]
            for a in range(3):
                bmin[node, a] = min(bmin[l_node, a], bmin[r_node, a])
                bmax[node, a] = max(bmax[l_node, a], bmax[r_node, a])
    return n_nodes


@njit(cache=True, nogil=True)
def traverse(bmin, bmax, left, right, start, count, order, pmin, pmax, o, d, t_lo, t_hi, pad, out, stack):
    """Write every primitive overlapping the segment into ``out``; return count or -1 on stack overflow."""
    n = 0
    sp = 0
    stack[sp] = 0
    sp += 1
    cap = stack.shape[0]
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _walk.slab(o, d, t_lo, t_hi, bmin[node], bmax[node], pad):
            continue
        if count[node] > 0:
            for i in range(start[node], start[node] + count[node]):
                p = order[i]
                if _walk.slab(o, d, t_lo, t_hi, pmin[p], pmax[p], pad):
                    out[n] = p
                    n += 1
        else:
            if sp + 2 > cap:
                return -1
            stack[sp] = right[node]
            sp += 1
            stack[sp] = left[node]
            sp += 1
    return n


# stand-in for 1/0 in packet tests; keeps every product finite, and a ray lying
# exactly on a slab plane then counts as touching (conservative)
_INV_ZERO = 1e300


@njit(cache=True, nogil=True, inline="always")
def _packet_test(px, py, pz, ix, iy, iz, t0, t1, m, boxes, i, pad, mask):
    """Padded slab test of box i (row min..max) against the first m packet rays; fills ``mask``."""
    x0 = boxes[i, 0] - pad
    y0 = boxes[i, 1] - pad
    z0 = boxes[i, 2] - pad
    x1 = boxes[i, 3] + pad
    y1 = boxes[i, 4] + pad
    z1 = boxes[i, 5] + pad
    any_hit = 0
    for j in range(m):
        ax = (x0 - px[j]) * ix[j]
        bx = (x1 - px[j]) * ix[j]
        ay = (y0 - py[j]) * iy[j]
        by = (y1 - py[j]) * iy[j]
        az = (z0 - pz[j]) * iz[j]
        bz = (z1 - pz[j]) * iz[j]
        lo = max(max(t0[j], min(ax, bx)), max(min(ay, by), min(az, bz)))
        hi = min(min(t1[j], max(ax, bx)), min(max(ay, by), max(az, bz)))
        h = 1 if lo <= hi else 0
        mask[j] = h
        any_hit |= h
    return any_hit


@njit(cache=True, nogil=True)
def load_packet_ray(data, j, o, d, t_lo, t_hi, pad):
    data[0, j] = o[0]
    data[1, j] = o[1]
    data[2, j] = o[2]
    for a in range(3):
        data[3 + a, j] = _INV_ZERO if d[a] == 0.0 else 1.0 / d[a]
    data[6, j] = t_lo - pad
    data[7, j] = t_hi + pad


@njit(cache=True, nogil=True)
def packet_candidates(node_box, left, right, start, count, order, prim_box, m, pad,
                      data, mask, hits, nh, stack):
    """Candidate boxes for the first m rays of a packet: a conservative superset of ``traverse``.

    Rays are traversed together; each node is tested against all of them at once
    and descended when any ray overlaps it. Returns 0, STACK_OVERFLOW, or
    HIT_OVERFLOW when a hit list outgrows ``hits`` (grow it and retry).
    """
    cap_hits = hits.shape[1]
    px = data[0].copy()
    py = data[1].copy()
    pz = data[2].copy()
    ix = data[3].copy()
    iy = data[4].copy()
    iz = data[5].copy()
    t0 = data[6].copy()
    t1 = data[7].copy()
    for j in range(m):
        nh[j] = 0
    cap = stack.shape[0]
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _packet_test(px, py, pz, ix, iy, iz, t0, t1, m, node_box, node, pad, mask):
            continue
        if count[node] > 0:
            for i in range(start[node], start[node] + count[node]):
                p = order[i]
                if not _packet_test(px, py, pz, ix, iy, iz, t0, t1, m, prim_box, p, pad, mask):
                    continue
                for j in range(m):
                    if mask[j]:
                        if nh[j] == cap_hits:
                            return HIT_OVERFLOW
                        hits[j, nh[j]] = p
                        nh[j] += 1
        else:
            if sp + 2 > cap:
                return STACK_OVERFLOW
            stack[sp] = right[node]
            sp += 1
            stack[sp] = left[node]
            sp += 1
    return 0


@dataclass
class Bvh:
    # (n, 6) rows of min|max, shared by scalar and packet traversal
    node_box: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    prim_box: np.ndarray
    leaf_capacity: int = 4

    @property
    def node_min(self) -> np.ndarray:
        return self.node_box[:, :3]

    @property
    def node_max(self) -> np.ndarray:
        return self.node_box[:, 3:]

    @property
    def prim_min(self) -> np.ndarray:
        return self.prim_box[:, :3]

    @property
    def prim_max(self) -> np.ndarray:
        return self.prim_box[:, 3:]

    @property
    def root(self) -> int:
        return 0

    @property
    def n_nodes(self) -> int:
        return self.left.shape[0]

    @property
    def n_primitives(self) -> int:
        return self.prim_min.shape[0]

    def is_leaf(self, node: int) -> bool:
        return self.count[node] > 0

    def depth(self) -> int:
        best, stack = 0, [(0, 1)]
        while stack:
            node, dep = stack.pop()
            best = max(best, dep)
            if not self.is_leaf(node):
                stack += [(int(self.left[node]), dep + 1), (int(self.right[node]), dep + 1)]
        return best

    def hits(self, o: np.ndarray, d: np.ndarray, t_lo: float, t_hi: float, pad: float = 0.0) -> np.ndarray:
        out = np.empty(self.n_primitives, np.int64)
        stack = np.empty(STACK_CAPACITY, np.int64)
        n = traverse(self.node_min, self.node_max, self.left, self.right, self.start, self.count, self.order,
                     self.prim_min, self.prim_max, o, d, t_lo, t_hi, pad, out, stack)
        if n < 0:
            raise BvhError(f"traversal stack exceeded {STACK_CAPACITY} entries")
        return out[:n]


def _primitive_arrays(primitives):
    if hasattr(primitives, "world_bounds"):
        return primitives.world_bounds()
    if isinstance(primitives, tuple) and len(primitives) == 2:
        mins, maxs = primitives
    else:
        boxes = list(primitives)
        if boxes and not isinstance(boxes[0], Aabb):
            raise TypeError("expected Aabb primitives")
        mins = [b.min for b in boxes]
        maxs = [b.max for b in boxes]
    return (np.ascontiguousarray(mins, dtype=np.float64).reshape(-1, 3),
            np.ascontiguousarray(maxs, dtype=np.float64).reshape(-1, 3))


def build(primitives, leaf_capacity: int = 4, sah: bool = False) -> Bvh:
    """Build a BVH by median split on the longest centroid axis (or full-sweep SAH).

    ``primitives`` is a LeafAabbSet, a sequence of Aabb, or a ``(mins, maxs)`` pair.
    """
    pmin, pmax = _primitive_arrays(primitives)
    n = pmin.shape[0]
    if n == 0:
        raise BvhError("cannot build a BVH over an empty primitive set")
    if leaf_capacity < 1:
        raise BvhError("leaf_capacity must be >= 1")
    if not (np.all(np.isfinite(pmin)) and np.all(np.isfinite(pmax))):
        raise BvhError("non-finite primitive bounds")
    bad = np.any(pmax <= pmin, axis=1)
    if bad.any():
        raise BvhError(f"degenerate primitive at index {int(np.argmax(bad))}")
    prim_box = np.empty((n, 6))
    prim_box[:, :3] = pmin
    prim_box[:, 3:] = pmax
    m = 2 * n
    node_box = np.empty((m, 6))
    left = np.empty(m, np.int64)
    right = np.empty(m, np.int64)
    start = np.empty(m, np.int64)
    count = np.empty(m, np.int64)
    order = np.empty(n, np.int64)
    used = _build(prim_box[:, :3], prim_box[:, 3:], leaf_capacity, sah, node_box[:, :3], node_box[:, 3:],
                  left, right, start, count, order)
    return Bvh(node_box[:used], left[:used], right[:used], start[:used], count[:used], order, prim_box,
               leaf_capacity)


def traverse_segment(bvh: Bvh, r: Ray, visit: Callable[[int], object]) -> int:
    """Call ``visit`` once per primitive whose box overlaps the segment with positive measure."""
    o = np.asarray(r.origin, np.float64)
    d = np.asarray(r.direction, np.float64)
    hits = bvh.hits(o, d, 0.0, r.t_max)
    for p in hits:
        visit(int(p))
    return int(hits.shape[0])
