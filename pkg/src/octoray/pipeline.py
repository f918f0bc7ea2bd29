"""Octree -> AABB -> BVH -> parallel ray shooting, plus the full-ray DDA baseline.

Both inserters share the same ray setup and the same canonical voxel walk, so
for any scan and any map state they produce identical update sets: the leaf
AABBs partition the workspace and the clipped walks over a partition union to
the full walk.
"""

from __future__ import annotations

import functools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from numba import njit

from octoray import _walk
from octoray import bvh as bvh_mod
from octoray.geometry import Aabb, GridSpec, Label, Ray, VoxelKey, box_key_bounds
from octoray.octree import LABEL_OF_CODE, OccupancyOctree

# candidate boxes are inflated by this fraction of a voxel so that rounding
# can never drop a box the canonical walk passes through
CANDIDATE_PAD = 1e-6

# per-worker dense label grids are used while cells * workers stays below this
DENSE_CELL_BUDGET = 1 << 27
# consecutive rays traversed together; camera rays from neighbouring pixels share most nodes
PACKET_SIZE = 16

LABEL_FREE = 1
LABEL_OCCUPIED = 2


class EmptyScanError(ValueError):
    pass


@dataclass
class Scan:
    sensor_origin: np.ndarray
    points: np.ndarray
    max_range: Optional[float] = None

    def __post_init__(self):
        self.sensor_origin = np.asarray(self.sensor_origin, dtype=np.float64).reshape(3)
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not (np.all(np.isfinite(self.sensor_origin)) and np.all(np.isfinite(self.points))):
            raise ValueError("scan coordinates must be finite")
        if self.max_range is not None and not self.max_range > 0:
            raise ValueError("max_range must be positive")

    def __len__(self):
        return self.points.shape[0]


def pack_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    return (keys[:, 0] << 42) | (keys[:, 1] << 21) | keys[:, 2]


def unpack_keys(codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    m = _walk.KEY_MASK
    return np.stack([(codes >> 42) & m, (codes >> 21) & m, codes & m], axis=1)


@dataclass
class UpdateSet:
    """Per-scan finest-resolution keys, stored as sorted unique packed codes."""

    occupied: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    free: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @classmethod
    def from_keys(cls, occupied=(), free=()) -> "UpdateSet":
        occ = np.unique(pack_keys(np.asarray(list(occupied), np.int64)))
        fr = np.unique(pack_keys(np.asarray(list(free), np.int64)))
        return cls(occ, np.setdiff1d(fr, occ, assume_unique=True))

    @classmethod
    def merge(cls, parts: Sequence["UpdateSet"]) -> "UpdateSet":
        """Union with occupied priority."""
        if not parts:
            return cls()
        occ = np.unique(np.concatenate([p.occupied for p in parts]))
        fr = np.unique(np.concatenate([p.free for p in parts]))
        return cls(occ, np.setdiff1d(fr, occ, assume_unique=True))

    def occupied_keys(self) -> set[VoxelKey]:
        return {VoxelKey(*map(int, k)) for k in unpack_keys(self.occupied)}

    def free_keys(self) -> set[VoxelKey]:
        return {VoxelKey(*map(int, k)) for k in unpack_keys(self.free)}

    def __len__(self):
        return self.occupied.shape[0] + self.free.shape[0]

    def __eq__(self, other):
        if not isinstance(other, UpdateSet):
            return NotImplemented
        return np.array_equal(self.occupied, other.occupied) and np.array_equal(self.free, other.free)

    def __repr__(self):
        return f"UpdateSet(occupied={self.occupied.shape[0]}, free={self.free.shape[0]})"


@dataclass
class LeafAabbSet:
    """Lattice-aligned labelled boxes, one per leaf cell; they tile the workspace."""

    grid: GridSpec
    keys: np.ndarray
    depths: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.keys.shape[0]

    def key_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        side = np.left_shift(np.int64(1), self.grid.max_depth - self.depths)
        return self.keys, self.keys + side[:, None]

    def world_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.key_bounds()
        org = self.grid.origin_array()
        res = self.grid.resolution
        return org + lo * res, org + hi * res

    def box(self, i: int) -> Aabb:
        mn, mx = self.world_bounds()
        return Aabb(tuple(mn[i]), tuple(mx[i]), LABEL_OF_CODE[int(self.labels[i])], int(self.depths[i]),
                    VoxelKey(*map(int, self.keys[i])))

    @property
    def boxes(self) -> list[Aabb]:
        return [self.box(i) for i in range(len(self))]

    def voxel_volume(self) -> int:
        """Exact total volume in finest voxels."""
        side = [1 << (self.grid.max_depth - int(d)) for d in self.depths]
        return sum(s * s * s for s in side)


@dataclass
class RayBatch:
    origins: np.ndarray
    directions: np.ndarray
    t_max: np.ndarray
    range_limited: np.ndarray
    skipped: int = 0

    def __len__(self):
        return self.t_max.shape[0]

    def __getitem__(self, i: int) -> Ray:
        return Ray(tuple(self.origins[i]), tuple(self.directions[i]), float(self.t_max[i]),
                   bool(self.range_limited[i]))

    def __iter__(self) -> Iterator[Ray]:
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_rays(cls, rays: Sequence[Ray]) -> "RayBatch":
        rays = list(rays)
        return cls(np.array([r.origin for r in rays], np.float64).reshape(-1, 3),
                   np.array([r.direction for r in rays], np.float64).reshape(-1, 3),
                   np.array([r.t_max for r in rays], np.float64),
                   np.array([r.range_limited for r in rays], np.bool_))


@dataclass
class PipelineStats:
    """Phase timings in seconds plus counters for one scan."""

    mode: str = "pipeline"
    workers: int = 1
    aabb_map: float = 0.0
    bvh_build: float = 0.0
    ray_shoot: float = 0.0
    merge: float = 0.0
    integrate: float = 0.0
    rays: int = 0
    skipped_points: int = 0
    range_limited_rays: int = 0
    clipped_rays: int = 0
    missed_rays: int = 0
    aabbs: int = 0
    visited_aabbs: int = 0
    occupied: int = 0
    free: int = 0
    merged_nodes: int = 0
    leaf_cells: int = 0
    hit_counts: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    @property
    def build(self) -> float:
        return self.aabb_map + self.bvh_build

    @property
    def transfer(self) -> float:
        """Merge + integrate: the CPU-only stand-in for GPU readback."""
        return self.merge + self.integrate

    def to_record(self) -> dict:
        rec = asdict(self)
        rec.pop("hit_counts")
        rec["build"] = self.build
        rec["transfer"] = self.transfer
        return rec


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _setup_batch(origins, dirs, tmax, org, res, size, k0s, kes, flags, spans):
    k0 = np.empty(3, np.int64)
    ke = np.empty(3, np.int64)
    span = np.empty(2)
    for r in range(origins.shape[0]):
        f = _walk.ray_setup(origins[r], dirs[r], tmax[r], org, res, size, k0, ke, span)
        flags[r] = f
        for a in range(3):
            k0s[r, a] = k0[a]
            kes[r, a] = ke[a]
        spans[r, 0] = span[0]
        spans[r, 1] = span[1]


@njit(cache=True, nogil=True)
def _label_ray(o, q, k0, ke, occ, org, res, hits_row, nh, prim_lo, prim_hi, buf, pos, lim,
               dense, glo, labels3, counts3, codes, labs, stats):
    """Subdivide the candidate boxes of one ray to finest keys and label them (intersection stage).

    ``q`` is the ray's reciprocal direction.
    """
    want_counts = counts3.shape[0] > 0
    for h in range(nh):
        p = hits_row[h]
        bx = prim_lo[p, 0]
        by = prim_lo[p, 1]
        bz = prim_lo[p, 2]
        if prim_hi[p, 0] - bx == 1:
            # finest-resolution box: a single membership test replaces the clipped walk
            if not _walk.walk_visits(o, q, org, res, k0, ke, bx, by, bz):
                continue
            buf[0, 0] = bx
            buf[0, 1] = by
            buf[0, 2] = bz
            n = 1
        else:
            n = _walk.clipped_walk(o, q, org, res, k0, ke, prim_lo, prim_hi, p, buf)
        for i in range(n):
            x = buf[i, 0]
            y = buf[i, 1]
            z = buf[i, 2]
            lab = 1
            if occ and x == ke[0] and y == ke[1] and z == ke[2]:
                lab = 2
            if dense:
                gx = x - glo[0]
                gy = y - glo[1]
                gz = z - glo[2]
                if lab > labels3[gx, gy, gz]:
                    labels3[gx, gy, gz] = lab
                if want_counts:
                    counts3[gx, gy, gz] += 1
            else:
                if pos >= lim:
                    stats[2] += 1
                    continue
                codes[pos] = _walk.pack_key(x, y, z)
                labs[pos] = lab
                pos += 1


@njit(cache=True, nogil=True)
def _shoot_chunk(origins, dirs, occ_ok, k0s, kes, flags, spans, r0, r1, org, res,
                 node_box, left, right, start, count, order, prim_box,
                 prim_lo, prim_hi, pad, dense, glo, labels3, counts3, codes, labs, offsets, stats):
    """Shoot rays r0..r1 in packets of consecutive rays against the BVH.

    stats: [visited boxes, missed rays, buffer overflows]
    """
    max_len = 1
    for r in range(r0, r1):
        if not flags[r] & _walk.MISS:
            ln = _walk.walk_length(k0s[r], kes[r])
            if ln > max_len:
                max_len = ln
    buf = np.empty((max_len, 3), np.int64)
    size = PACKET_SIZE
    data = np.empty((8, size))
    mask = np.empty(size, np.int64)
    hits = np.empty((size, min(prim_box.shape[0], 256)), np.int64)
    nh = np.zeros(size, np.int64)
    ids = np.empty(size, np.int64)
    recip = np.empty(3)
    stack = np.empty(bvh_mod.STACK_CAPACITY, np.int64)
    r = r0
    while r < r1:
        m = 0
        while m < size and r < r1:
            if flags[r] & _walk.MISS:
                stats[1] += 1
            else:
                bvh_mod.load_packet_ray(data, m, origins[r], dirs[r], spans[r, 0], spans[r, 1], pad)
                ids[m] = r
                m += 1
            r += 1
        if m == 0:
            continue
        status = bvh_mod.packet_candidates(node_box, left, right, start, count, order, prim_box,
                                           m, pad, data, mask, hits, nh, stack)
        while status == bvh_mod.HIT_OVERFLOW:
            hits = np.empty((size, 2 * hits.shape[1]), np.int64)
            status = bvh_mod.packet_candidates(node_box, left, right, start, count, order, prim_box,
                                               m, pad, data, mask, hits, nh, stack)
        if status == bvh_mod.STACK_OVERFLOW:
            stats[2] += 1
            continue
        for j in range(m):
            k = ids[j]
            if nh[j] == 0:
                # miss stage: nothing recorded, ray terminates
                stats[1] += 1
                continue
            stats[0] += nh[j]
            _walk.reciprocal_into(dirs[k], recip)
            _label_ray(origins[k], recip, k0s[k], kes[k], occ_ok[k], org, res, hits[j], nh[j],
                       prim_lo, prim_hi, buf, offsets[k], offsets[k + 1], dense, glo, labels3, counts3,
                       codes, labs, stats)


@njit(cache=True, nogil=True)
def _baseline_kernel(origins, dirs, tmax, limited, org, res, size, stats):
    """Octomap-style insertion: full walk per ray into free/occupied key sets."""
    k0 = np.empty(3, np.int64)
    ke = np.empty(3, np.int64)
    span = np.empty(2)
    buf = np.empty((64, 3), np.int64)
    recip = np.empty(3)
    free = set()
    occ = set()
    free.add(np.int64(0))
    occ.add(np.int64(0))
    free.clear()
    occ.clear()
    for r in range(origins.shape[0]):
        f = _walk.ray_setup(origins[r], dirs[r], tmax[r], org, res, size, k0, ke, span)
        if f & _walk.MISS:
            stats[1] += 1
            continue
        if f & (_walk.CLIP_START | _walk.CLIP_END):
            stats[0] += 1
        ln = _walk.walk_length(k0, ke)
        if ln > buf.shape[0]:
            buf = np.empty((2 * ln, 3), np.int64)
        _walk.reciprocal_into(dirs[r], recip)
        n = _walk.full_walk(origins[r], recip, org, res, k0, ke, buf)
        occ_ok = not limited[r] and not (f & _walk.CLIP_END)
        last = n - 1 if occ_ok else n
        for i in range(last):
            free.add(_walk.pack_key(buf[i, 0], buf[i, 1], buf[i, 2]))
        if occ_ok:
            occ.add(_walk.pack_key(ke[0], ke[1], ke[2]))
    for c in occ:
        if c in free:
            free.discard(c)
    out_occ = np.empty(len(occ), np.int64)
    i = 0
    for c in occ:
        out_occ[i] = c
        i += 1
    out_free = np.empty(len(free), np.int64)
    i = 0
    for c in free:
        out_free[i] = c
        i += 1
    return out_occ, out_free


# ---------------------------------------------------------------- stages


def map_leaves_to_aabbs(tree: OccupancyOctree) -> LeafAabbSet:
    """One labelled AABB per leaf cell, unknown regions included, so the set fills the workspace."""
    keys, depths, values, kinds = tree.leaf_arrays()
    return LeafAabbSet(tree.grid, keys, depths, tree.leaf_labels(values, kinds))


def generate_rays(scan: Scan) -> RayBatch:
    """One ray per point from the sensor origin, with length equal to the point distance."""
    if len(scan) == 0:
        raise EmptyScanError("empty scan")
    v = scan.points - scan.sensor_origin
    dist = np.sqrt(np.einsum("ij,ij->i", v, v))
    keep = dist > 0
    v, dist = v[keep], dist[keep]
    dirs = v / dist[:, None]
    limited = np.zeros(dist.shape[0], np.bool_)
    if scan.max_range is not None:
        limited = dist > scan.max_range
        dist = np.where(limited, scan.max_range, dist)
    origins = np.broadcast_to(scan.sensor_origin, dirs.shape).copy()
    return RayBatch(origins, np.ascontiguousarray(dirs), dist, limited, skipped=int((~keep).sum()))


def classify_intersection(ray: Ray, box: Aabb, grid: GridSpec) -> UpdateSet:
    """Label the finest voxels of ``box`` the ray traverses: endpoint occupied, the rest free."""
    o = np.asarray(ray.origin, np.float64)
    d = np.asarray(ray.direction, np.float64)
    k0 = np.zeros(3, np.int64)
    ke = np.zeros(3, np.int64)
    span = np.zeros(2)
    flags = _walk.ray_setup(o, d, ray.t_max, grid.origin_array(), grid.resolution, grid.size, k0, ke, span)
    if flags & _walk.MISS:
        return UpdateSet()
    lo, hi = box_key_bounds(box, grid)
    buf = np.empty((_walk.walk_length(k0, ke), 3), np.int64)
    n = _walk.clipped_walk(o, _walk.reciprocal(d), grid.origin_array(), grid.resolution, k0, ke, lo[None], hi[None], 0, buf)
    keys = buf[:n]
    occ_ok = not ray.range_limited and not flags & _walk.CLIP_END
    is_end = np.all(keys == ke, axis=1) & occ_ok
    return UpdateSet(pack_keys(keys[is_end]), np.sort(pack_keys(keys[~is_end])))


@functools.lru_cache(maxsize=None)
def _pool(workers: int) -> ThreadPoolExecutor:
    # reused across scans so thread start-up stays out of the shooting phase
    return ThreadPoolExecutor(max_workers=workers)


def _chunks(n: int, workers: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, n, workers + 1).round().astype(np.int64)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def shoot_rays_parallel(bvh: bvh_mod.Bvh, aabbs: LeafAabbSet, rays: RayBatch, workers: int = 1,
                        collect_hit_counts: bool = False) -> tuple[UpdateSet, PipelineStats]:
    """Shoot every ray against the BVH in ``workers`` threads; merge with occupied priority."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    grid = aabbs.grid
    stats = PipelineStats(mode="pipeline", workers=workers, rays=len(rays), aabbs=len(aabbs),
                          range_limited_rays=int(rays.range_limited.sum()), skipped_points=rays.skipped)
    n = len(rays)
    if n == 0:
        return UpdateSet(), stats

    t0 = time.perf_counter()
    org = grid.origin_array()
    k0s = np.empty((n, 3), np.int64)
    kes = np.empty((n, 3), np.int64)
    flags = np.empty(n, np.int64)
    spans = np.empty((n, 2))
    _setup_batch(rays.origins, rays.directions, rays.t_max, org, grid.resolution, grid.size,
                 k0s, kes, flags, spans)
    valid = (flags & _walk.MISS) == 0
    stats.clipped_rays = int(((flags & (_walk.CLIP_START | _walk.CLIP_END)) != 0)[valid].sum())
    occ_ok = valid & ~rays.range_limited & ((flags & _walk.CLIP_END) == 0)

    if valid.any():
        glo = np.minimum(k0s[valid], kes[valid]).min(axis=0)
        ghi = np.maximum(k0s[valid], kes[valid]).max(axis=0) + 1
    else:
        glo = np.zeros(3, np.int64)
        ghi = np.ones(3, np.int64)
    shape = tuple(int(v) for v in ghi - glo)
    dense = int(np.prod(shape)) * workers <= DENSE_CELL_BUDGET

    lengths = np.where(valid, np.abs(kes - k0s).sum(axis=1) + 1, 0)
    offsets = np.zeros(n + 1, np.int64)
    np.cumsum(lengths, out=offsets[1:])
    if dense:
        codes = np.zeros(0, np.int64)
        labs = np.zeros(0, np.uint8)
    else:
        codes = np.zeros(int(offsets[-1]), np.int64)
        labs = np.zeros(int(offsets[-1]), np.uint8)

    prim_lo, prim_hi = aabbs.key_bounds()
    pad = CANDIDATE_PAD * grid.resolution
    chunks = _chunks(n, workers)
    per_worker = []
    for _ in chunks:
        lab3 = np.zeros(shape if dense else (0, 0, 0), np.uint8)
        cnt3 = np.zeros(shape if (dense and collect_hit_counts) else (0, 0, 0), np.int32)
        per_worker.append((lab3, cnt3, np.zeros(3, np.int64)))

    def run(i):
        r0, r1 = chunks[i]
        lab3, cnt3, st = per_worker[i]
        _shoot_chunk(rays.origins, rays.directions, occ_ok, k0s, kes, flags, spans, r0, r1, org,
                     grid.resolution, bvh.node_box, bvh.left, bvh.right, bvh.start,
                     bvh.count, bvh.order, bvh.prim_box, prim_lo, prim_hi, pad, dense,
                     glo, lab3, cnt3, codes, labs, offsets, st)

    if workers == 1:
        run(0)
    else:
        list(_pool(workers).map(run, range(len(chunks))))
    t1 = time.perf_counter()

    st = np.sum([w[2] for w in per_worker], axis=0)
    stats.visited_aabbs, stats.missed_rays = int(st[0]), int(st[1])
    if st[2]:
        raise RuntimeError(f"{int(st[2])} ray buffer overflows during shooting")

    # deterministic merge: elementwise max keeps occupied over free regardless of worker order
    if dense:
        merged = per_worker[0][0]
        for lab3, _, _ in per_worker[1:]:
            np.maximum(merged, lab3, out=merged)
        occ_idx = np.nonzero(merged == LABEL_OCCUPIED)
        free_idx = np.nonzero(merged == LABEL_FREE)
        glo_ = glo.astype(np.int64)
        occ = pack_keys(np.stack(occ_idx, axis=1) + glo_)
        free = pack_keys(np.stack(free_idx, axis=1) + glo_)
        if collect_hit_counts:
            total = per_worker[0][1].astype(np.int64)
            for _, cnt3, _ in per_worker[1:]:
                total += cnt3
            nz = np.nonzero(total)
            stats.hit_counts = (pack_keys(np.stack(nz, axis=1) + glo_), total[nz])
    else:
        occ = np.unique(codes[labs == LABEL_OCCUPIED])
        free = np.setdiff1d(np.unique(codes[labs == LABEL_FREE]), occ, assume_unique=True)
        if collect_hit_counts:
            stats.hit_counts = np.unique(codes[labs > 0], return_counts=True)
    updates = UpdateSet(occ, free)
    stats.ray_shoot = t1 - t0
    stats.merge = time.perf_counter() - t1
    stats.occupied, stats.free = updates.occupied.shape[0], updates.free.shape[0]
    return updates, stats


def integrate_scan(tree: OccupancyOctree, updates: UpdateSet) -> PipelineStats:
    """One hit per occupied key, one miss per free key (sorted key order), then prune."""
    t0 = time.perf_counter()
    codes = np.concatenate([updates.occupied, updates.free])
    deltas = np.concatenate([np.full(updates.occupied.shape[0], tree.params.l_hit),
                             np.full(updates.free.shape[0], tree.params.l_miss)])
    order = np.argsort(codes, kind="stable")
    if codes.shape[0]:
        tree.apply_deltas(unpack_keys(codes[order]), deltas[order])
    merged = tree.prune()
    return PipelineStats(integrate=time.perf_counter() - t0, merged_nodes=merged,
                         occupied=updates.occupied.shape[0], free=updates.free.shape[0])


def baseline_updates(rays: RayBatch, grid: GridSpec) -> tuple[UpdateSet, PipelineStats]:
    stats = PipelineStats(mode="baseline", workers=1, rays=len(rays), skipped_points=rays.skipped,
                          range_limited_rays=int(rays.range_limited.sum()))
    t0 = time.perf_counter()
    st = np.zeros(2, np.int64)
    occ, free = _baseline_kernel(rays.origins, rays.directions, rays.t_max, rays.range_limited,
                                 grid.origin_array(), grid.resolution, grid.size, st)
    updates = UpdateSet(np.sort(occ), np.sort(free))
    stats.ray_shoot = time.perf_counter() - t0
    stats.clipped_rays, stats.missed_rays = int(st[0]), int(st[1])
    stats.occupied, stats.free = updates.occupied.shape[0], updates.free.shape[0]
    return updates, stats


def insert_scan_baseline(tree: OccupancyOctree, scan: Scan, integrate: bool = True
                         ) -> tuple[UpdateSet, PipelineStats]:
    """Reference inserter: full-workspace DDA per ray, serial, no acceleration structure."""
    rays = generate_rays(scan)
    updates, stats = baseline_updates(rays, tree.grid)
    if integrate:
        delta = integrate_scan(tree, updates)
        stats.integrate, stats.merged_nodes = delta.integrate, delta.merged_nodes
        stats.leaf_cells = tree.leaf_count()
    return updates, stats


def insert_scan(tree: OccupancyOctree, scan: Scan, workers: int = 1, leaf_capacity: int = 4,
                sah: bool = False, collect_hit_counts: bool = False) -> PipelineStats:
    """Full pipeline for one scan: AABB mapping, BVH build, parallel shooting, integration."""
    rays = generate_rays(scan)
    t0 = time.perf_counter()
    aabbs = map_leaves_to_aabbs(tree)
    t1 = time.perf_counter()
    hierarchy = bvh_mod.build(aabbs, leaf_capacity=leaf_capacity, sah=sah)
    t2 = time.perf_counter()
    updates, stats = shoot_rays_parallel(hierarchy, aabbs, rays, workers, collect_hit_counts)
    delta = integrate_scan(tree, updates)
    stats.aabb_map, stats.bvh_build = t1 - t0, t2 - t1
    stats.integrate, stats.merged_nodes = delta.integrate, delta.merged_nodes
    stats.leaf_cells = tree.leaf_count()
    return stats


def shoot_scan(tree: OccupancyOctree, scan: Scan, workers: int = 1, leaf_capacity: int = 4,
               sah: bool = False) -> tuple[UpdateSet, PipelineStats]:
    """Pipeline ray shooting without integration (for equivalence checks and benchmarks)."""
    rays = generate_rays(scan)
    t0 = time.perf_counter()
    aabbs = map_leaves_to_aabbs(tree)
    t1 = time.perf_counter()
    hierarchy = bvh_mod.build(aabbs, leaf_capacity=leaf_capacity, sah=sah)
    t2 = time.perf_counter()
    updates, stats = shoot_rays_parallel(hierarchy, aabbs, rays, workers)
    stats.aabb_map, stats.bvh_build = t1 - t0, t2 - t1
    return updates, stats
