from __future__ import annotations

import itertools

import numpy as np
import pytest

from octoray import bvh
from octoray.geometry import Aabb, GridSpec, Label, Ray, VoxelKey, aabb_of_key, dda_traverse, key_of_point, \
    ray_aabb_intersect
from octoray.octree import OccupancyOctree
from octoray.pipeline import (EmptyScanError, RayBatch, Scan, UpdateSet, baseline_updates, classify_intersection,
                              generate_rays, insert_scan, insert_scan_baseline, integrate_scan,
                              map_leaves_to_aabbs, pack_keys, shoot_rays_parallel, shoot_scan, unpack_keys)
from octoray.scansim import CameraIntrinsics, make_room_scene, make_view_poses, render_depth_scan

TOY = GridSpec(1.0, 3)
GRID = GridSpec.centered(0.05, 16)


def random_scan(rng, n=1000, spread=2.0, max_range=None) -> Scan:
    o = rng.uniform(-0.5, 0.5, 3)
    return Scan(o, o + rng.normal(0.0, spread, (n, 3)), max_range)


def shoot(tree: OccupancyOctree, rays: RayBatch, workers=1):
    aabbs = map_leaves_to_aabbs(tree)
    return shoot_rays_parallel(bvh.build(aabbs), aabbs, rays, workers)


def toy_dda_oracle(rays) -> UpdateSet:
    """Set semantics straight from per-ray dda_traverse."""
    occ, free = set(), set()
    for r in rays:
        t = dda_traverse(r, TOY)
        keys = t.keys
        end_inside = not t.clipped or all(0 <= c < TOY.span for c in r.endpoint)
        if keys and end_inside and not r.range_limited and keys[-1] == key_of_point(r.endpoint, TOY):
            occ.add(keys[-1])
            free.update(keys[:-1])
        else:
            free.update(keys)
    return UpdateSet.from_keys(occ, free)


class TestKeyPacking:
    def test_round_trip(self):
        keys = np.random.default_rng(0).integers(0, 1 << 21, (1000, 3))
        assert np.array_equal(unpack_keys(pack_keys(keys)), keys)

    def test_order_is_lexicographic(self):
        keys = np.random.default_rng(1).integers(0, 1 << 21, (1000, 3))
        by_code = keys[np.argsort(pack_keys(keys), kind="stable")]
        by_lex = keys[np.lexsort(keys.T[::-1])]
        assert np.array_equal(by_code, by_lex)


class TestMapLeavesToAabbs:
    def test_empty_tree(self):
        a = map_leaves_to_aabbs(OccupancyOctree(GRID))
        assert len(a) == 1
        b = a.box(0)
        assert b.label is Label.UNKNOWN and b.depth == 0
        assert b.max[0] - b.min[0] == pytest.approx(GRID.span)

    def test_one_to_one_with_leaf_cells(self):
        t = OccupancyOctree(TOY)
        rng = np.random.default_rng(2)
        t.apply_deltas(rng.integers(0, 8, (40, 3)), np.full(40, t.params.l_hit))
        a = map_leaves_to_aabbs(t)
        cells = t.leaf_cells()
        assert len(a) == len(cells)
        for b, (k, d, label) in zip(a.boxes, cells):
            assert b == aabb_of_key(k, d, TOY, label)

    def test_view_scale_map(self):
        scene = make_room_scene(42, 10)
        pose = make_view_poses(scene, 1, 42)[0]
        t = OccupancyOctree(GRID)
        insert_scan_baseline(t, render_depth_scan(scene, pose, CameraIntrinsics()))
        a = map_leaves_to_aabbs(t)
        assert len(a) == t.leaf_count()
        assert 10_000 <= len(a) <= 100_000
        assert a.voxel_volume() == GRID.size ** 3


class TestGenerateRays:
    def test_axis_point(self):
        rays = generate_rays(Scan((0, 0, 0), [(3, 0, 0)]))
        assert rays.directions.tolist() == [[1, 0, 0]]
        assert rays.t_max.tolist() == [3.0]

    def test_coincident_point_skipped(self):
        rays = generate_rays(Scan((1, 2, 3), [(1, 2, 3)]))
        assert len(rays) == 0 and rays.skipped == 1

    def test_empty_scan_rejected(self):
        with pytest.raises(EmptyScanError, match="empty scan"):
            generate_rays(Scan((0, 0, 0), np.zeros((0, 3))))

    def test_full_frame(self):
        scene = make_room_scene(42, 0)
        pose = make_view_poses(scene, 1, 0)[0]
        assert len(generate_rays(render_depth_scan(scene, pose, CameraIntrinsics(320, 240)))) == 76_800

    def test_max_range_clamps_and_flags(self):
        rays = generate_rays(Scan((0, 0, 0), [(3, 0, 0), (0, 1, 0)], max_range=2.0))
        assert rays.t_max.tolist() == [2.0, 1.0]
        assert rays.range_limited.tolist() == [True, False]

    def test_unit_directions(self):
        rays = generate_rays(random_scan(np.random.default_rng(3)))
        np.testing.assert_allclose(np.linalg.norm(rays.directions, axis=1), 1.0, atol=1e-12)


class TestClassifyIntersection:
    def test_end_inside_finest_box(self):
        r = Ray.between((0.5, 0.5, 0.5), (2.5, 0.5, 0.5))
        u = classify_intersection(r, aabb_of_key((2, 0, 0), 3, TOY), TOY)
        assert u.occupied_keys() == {(2, 0, 0)} and u.free_keys() == set()

    def test_passing_through_finest_box(self):
        r = Ray.between((0.5, 0.5, 0.5), (2.5, 0.5, 0.5))
        u = classify_intersection(r, aabb_of_key((1, 0, 0), 3, TOY), TOY)
        assert u.occupied_keys() == set() and u.free_keys() == {(1, 0, 0)}

    def test_coarse_box_matches_restricted_full_dda(self):
        box = aabb_of_key((4, 4, 4), 1, TOY)  # a 4^3 block
        rng = np.random.default_rng(4)
        for _ in range(300):
            a = rng.uniform(0, 8, 3)
            b = rng.uniform(4, 8, 3)  # ends inside the block
            r = Ray.between(tuple(a), tuple(b))
            full = dda_traverse(r, TOY).keys
            inside = [k for k in full if all(4 <= c < 8 for c in k)]
            u = classify_intersection(r, box, TOY)
            assert u.occupied_keys() == {inside[-1]}
            assert u.free_keys() == set(inside[:-1])

    def test_axial_crossing_of_coarse_box(self):
        box = aabb_of_key((4, 4, 4), 1, TOY)
        r = Ray.between((0.5, 5.5, 5.5), (6.5, 5.5, 5.5))
        u = classify_intersection(r, box, TOY)
        assert u.occupied_keys() == {(6, 5, 5)}
        assert u.free_keys() == {(4, 5, 5), (5, 5, 5)}

    def test_range_limited_ray_has_no_occupied(self):
        r = Ray((0.5, 0.5, 0.5), (1, 0, 0), 2.0, range_limited=True)
        u = classify_intersection(r, aabb_of_key((0, 0, 0), 0, TOY), TOY)
        assert u.occupied_keys() == set()
        assert u.free_keys() == {(0, 0, 0), (1, 0, 0), (2, 0, 0)}


class TestShootRaysParallel:
    def test_empty_ray_list(self):
        u, stats = shoot(OccupancyOctree(TOY), RayBatch.from_rays([]))
        assert len(u) == 0 and stats.rays == 0

    def test_single_ray_single_box(self):
        r = Ray.between((0.5, 0.5, 0.5), (2.5, 3.7, 1.2))
        u, stats = shoot(OccupancyOctree(TOY), RayBatch.from_rays([r]))
        base, _ = baseline_updates(RayBatch.from_rays([r]), TOY)
        assert u == base
        assert stats.aabbs == 1 and stats.visited_aabbs == 1

    def test_occupied_priority(self):
        a = Ray.between((0.5, 0.5, 0.5), (3.5, 0.5, 0.5))  # passes through (2,0,0)
        b = Ray.between((2.5, 3.5, 0.5), (2.5, 0.5, 0.5))  # ends in (2,0,0)
        for rays in ([a, b], [b, a]):
            u, _ = shoot(OccupancyOctree(TOY), RayBatch.from_rays(rays))
            assert VoxelKey(2, 0, 0) in u.occupied_keys()
            assert VoxelKey(2, 0, 0) not in u.free_keys()

    def test_toy_oracle_with_partial_maps(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            t = OccupancyOctree(TOY)
            n = int(rng.integers(0, 60))
            t.apply_deltas(rng.integers(0, 8, (n, 3)), rng.choice([t.params.l_hit, t.params.l_miss], n))
            rays = []
            for _ in range(30):
                a, b = rng.uniform(-1, 9, 3), rng.uniform(0, 8, 3)
                if rng.random() < 0.3:
                    a = np.floor(a) + 0.5  # pixel-centre origins put some rays on lattice planes
                if np.linalg.norm(b - a) > 1e-6:
                    rays.append(Ray.between(tuple(a), tuple(b)))
            batch = RayBatch.from_rays(rays)
            u, _ = shoot(t, batch)
            base, _ = baseline_updates(batch, TOY)
            assert u == base
            inside = [r for r in rays if all(0 <= c < 8 for c in r.origin)]
            if inside:
                sub = RayBatch.from_rays(inside)
                assert shoot(t, sub)[0] == toy_dda_oracle(inside)

    @pytest.mark.parametrize("workers", [2, 3, 8])
    def test_worker_count_invariance(self, workers):
        rng = np.random.default_rng(6)
        t = OccupancyOctree(GRID)
        insert_scan_baseline(t, random_scan(rng))
        rays = generate_rays(random_scan(rng, 3000))
        assert shoot(t, rays, workers)[0] == shoot(t, rays, 1)[0]

    def test_endpoint_and_free_key_soundness(self):
        rng = np.random.default_rng(7)
        t = OccupancyOctree(GRID)
        insert_scan_baseline(t, random_scan(rng, 300))
        scan = random_scan(rng, 200, max_range=3.0)
        rays = generate_rays(scan)
        u, _ = shoot(t, rays)
        occ = u.occupied_keys()
        assert not occ & u.free_keys()
        for r in rays:
            if not r.range_limited:
                assert key_of_point(r.endpoint, GRID) in occ
        for k in list(u.free_keys())[:200]:
            box = aabb_of_key(k, GRID.max_depth, GRID)
            assert any(ray_aabb_intersect(r, box) is not None or box.contains(r.origin) for r in rays)

    def test_rays_leaving_workspace(self):
        r = Ray.between((6.5, 0.5, 0.5), (9.5, 0.5, 0.5))
        u, stats = shoot(OccupancyOctree(TOY), RayBatch.from_rays([r]))
        assert u.occupied_keys() == set() and u.free_keys() == {(6, 0, 0), (7, 0, 0)}
        assert stats.clipped_rays == 1

    def test_ray_outside_workspace_misses(self):
        r = Ray.between((9.5, 0.5, 0.5), (12.5, 0.5, 0.5))
        u, stats = shoot(OccupancyOctree(TOY), RayBatch.from_rays([r]))
        assert len(u) == 0 and stats.missed_rays == 1

    def test_hit_counts_match_traversal_lengths(self):
        rng = np.random.default_rng(8)
        t = OccupancyOctree(GRID)
        insert_scan_baseline(t, random_scan(rng, 200))
        rays = generate_rays(random_scan(rng, 100))
        aabbs = map_leaves_to_aabbs(t)
        _, stats = shoot_rays_parallel(bvh.build(aabbs), aabbs, rays, 2, collect_hit_counts=True)
        codes, counts = stats.hit_counts
        expect = {}
        for r in rays:
            for k in dda_traverse(r, GRID).keys:
                c = int(pack_keys(np.array([k]))[0])
                expect[c] = expect.get(c, 0) + 1
        assert dict(zip(codes.tolist(), counts.tolist())) == expect


class TestIntegrateScan:
    def test_empty_update_set(self):
        t = OccupancyOctree(TOY)
        t.update_voxel((1, 1, 1), True)
        before = t.copy()
        assert integrate_scan(t, UpdateSet()).merged_nodes == 0
        assert t == before

    def test_eight_free_children_merge(self):
        t = OccupancyOctree(TOY)
        stats = integrate_scan(t, UpdateSet.from_keys(free=itertools.product((2, 3), repeat=3)))
        assert stats.merged_nodes == 1
        assert t.stored_leaves()[1].tolist() == [2]

    def test_repeated_scans_saturate(self):
        r = [Ray.between((0.5, 0.5, 0.5), (5.5, 0.5, 0.5))]
        t = OccupancyOctree(TOY)
        u, _ = baseline_updates(RayBatch.from_rays(r), TOY)
        prev = None
        for _ in range(20):
            integrate_scan(t, u)
            cur = (t.log_odds((5, 0, 0)), t.log_odds((2, 0, 0)))
            if prev is not None:
                assert cur[0] >= prev[0] and cur[1] <= prev[1]
            prev = cur
        assert prev == (t.params.l_max, t.params.l_min)


class TestInserters:
    def test_baseline_axis_ray(self):
        t = OccupancyOctree(TOY)
        u, _ = insert_scan_baseline(t, Scan((0.5, 0.5, 0.5), [(2.5, 0.5, 0.5)]))
        assert u.free_keys() == {(0, 0, 0), (1, 0, 0)}
        assert u.occupied_keys() == {(2, 0, 0)}

    def test_full_frame_baseline_timing(self):
        scene = make_room_scene(42, 10)
        scan = render_depth_scan(scene, make_view_poses(scene, 1, 42)[0], CameraIntrinsics())
        _, stats = insert_scan_baseline(OccupancyOctree(GRID), scan)
        assert stats.rays == 76_800 and stats.ray_shoot > 0 and stats.integrate > 0

    def test_first_scan_on_empty_map(self):
        rng = np.random.default_rng(9)
        scan = random_scan(rng)
        t = OccupancyOctree(GRID)
        stats = insert_scan(t, scan)
        assert stats.aabbs == 1 and stats.visited_aabbs == stats.rays and stats.missed_rays == 0
        ends = [key_of_point(p, GRID) for p in scan.points]
        assert all(t.classify(k) is Label.OCCUPIED for k in ends)

    def test_pipeline_and_baseline_trees_equal(self):
        rng = np.random.default_rng(10)
        a, b = OccupancyOctree(GRID), OccupancyOctree(GRID)
        for i in range(8):
            scan = random_scan(rng, 500, max_range=None if i % 3 else 2.5)
            u, _ = shoot_scan(a, scan, workers=2)
            ub, _ = insert_scan_baseline(b, scan)
            assert u == ub
            integrate_scan(a, u)
            assert a == b

    def test_stats_phases(self):
        rng = np.random.default_rng(11)
        t = OccupancyOctree(GRID)
        insert_scan(t, random_scan(rng))
        s = insert_scan(t, random_scan(rng), workers=2)
        rec = s.to_record()
        for k in ("aabb_map", "bvh_build", "ray_shoot", "merge", "integrate", "build", "transfer"):
            assert rec[k] >= 0
        assert s.build == s.aabb_map + s.bvh_build and s.transfer == s.merge + s.integrate
        assert s.leaf_cells == t.leaf_count() and s.aabbs > 1
