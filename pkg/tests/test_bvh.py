from __future__ import annotations

import itertools

import numpy as np
import pytest

from octoray import bvh
from octoray.geometry import Aabb, Ray, ray_aabb_intersect

CUBES = [Aabb(k, tuple(c + 1 for c in k)) for k in itertools.product((0, 1), repeat=3)]


def linear_scan(boxes: list[Aabb], r: Ray) -> set[int]:
    return {i for i, b in enumerate(boxes) if ray_aabb_intersect(r, b) is not None}


def random_boxes(rng, n: int) -> list[Aabb]:
    lo = rng.uniform(-5, 5, (n, 3))
    return [Aabb(tuple(a), tuple(a + s)) for a, s in zip(lo, rng.uniform(0.05, 1.5, (n, 3)))]


def random_ray(rng, lo=-6.0, hi=6.0) -> Ray:
    while True:
        a, b = rng.uniform(lo, hi, 3), rng.uniform(lo, hi, 3)
        if np.linalg.norm(b - a) > 1e-6:
            return Ray.between(tuple(a), tuple(b))


def visited(h: bvh.Bvh, r: Ray) -> list[int]:
    out = []
    n = bvh.traverse_segment(h, r, out.append)
    assert n == len(out)
    return out


class TestBuild:
    def test_single_primitive(self):
        h = bvh.build([CUBES[0]])
        assert h.n_nodes == 1
        assert h.is_leaf(h.root)
        assert h.node_min[0].tolist() == [0, 0, 0] and h.node_max[0].tolist() == [1, 1, 1]

    def test_eight_cubes_root_bounds(self):
        h = bvh.build(CUBES, leaf_capacity=4)
        assert h.node_min[h.root].tolist() == [0, 0, 0]
        assert h.node_max[h.root].tolist() == [2, 2, 2]

    def test_empty_rejected(self):
        with pytest.raises(bvh.BvhError):
            bvh.build([])

    def test_degenerate_rejected(self):
        with pytest.raises(bvh.BvhError):
            bvh.build((np.zeros((1, 3)), np.array([[1.0, 0.0, 1.0]])))

    @pytest.mark.parametrize("sah", [False, True])
    def test_structural_audit(self, sah):
        rng = np.random.default_rng(0)
        for _ in range(1000 if not sah else 100):
            boxes = random_boxes(rng, int(rng.integers(1, 60)))
            cap = int(rng.integers(1, 6))
            h = bvh.build(boxes, leaf_capacity=cap, sah=sah)
            seen = []
            stack = [(h.root, [])]
            while stack:
                node, ancestors = stack.pop()
                chain = ancestors + [node]
                if h.is_leaf(node):
                    assert h.count[node] <= cap
                    prims = h.order[h.start[node]:h.start[node] + h.count[node]].tolist()
                    seen += prims
                    for p in prims:
                        for a in chain:
                            assert np.all(h.node_min[a] <= h.prim_min[p])
                            assert np.all(h.node_max[a] >= h.prim_max[p])
                    # leaf bounds are the tight union of their primitives
                    assert np.array_equal(h.node_min[node], h.prim_min[prims].min(axis=0))
                    assert np.array_equal(h.node_max[node], h.prim_max[prims].max(axis=0))
                else:
                    stack += [(int(h.left[node]), chain), (int(h.right[node]), chain)]
            assert sorted(seen) == list(range(len(boxes)))

    def test_deterministic(self):
        boxes = random_boxes(np.random.default_rng(1), 500)
        a, b = bvh.build(boxes), bvh.build(boxes)
        assert all(np.array_equal(getattr(a, f), getattr(b, f))
                   for f in ("node_min", "node_max", "left", "right", "start", "count", "order"))

    def test_depth_bounded(self):
        boxes = random_boxes(np.random.default_rng(2), 30_000)
        assert bvh.build(boxes).depth() < bvh.STACK_CAPACITY


class TestTraverseSegment:
    def test_miss_root(self):
        h = bvh.build(CUBES)
        assert visited(h, Ray((5, 5, 5), (1, 0, 0), 3.0)) == []

    def test_axis_ray_through_tiling(self):
        h = bvh.build(CUBES)
        got = visited(h, Ray((-1, 0.5, 0.5), (1, 0, 0), 4.0))
        assert len(got) == 2
        assert {tuple(CUBES[i].min) for i in got} == {(0, 0, 0), (1, 0, 0)}

    def test_segment_stopping_inside(self):
        h = bvh.build(CUBES)
        got = visited(h, Ray((-1, 0.5, 0.5), (1, 0, 0), 1.5))
        assert [tuple(CUBES[i].min) for i in got] == [(0, 0, 0)]

    @pytest.mark.parametrize("sah", [False, True])
    def test_linear_scan_oracle(self, sah):
        rng = np.random.default_rng(3)
        boxes = random_boxes(rng, 300)
        h = bvh.build(boxes, sah=sah)
        for _ in range(2000):
            r = random_ray(rng)
            got = visited(h, r)
            assert len(got) == len(set(got))
            assert set(got) == linear_scan(boxes, r)

    def test_axis_parallel_rays_on_tiling(self):
        # rays along lattice planes exercise the zero-direction and grazing-contact rules
        h = bvh.build(CUBES, leaf_capacity=1)
        for y, z in itertools.product((0.0, 0.5, 1.0, 2.0), repeat=2):
            r = Ray((-1, y, z), (1, 0, 0), 5.0)
            assert set(visited(h, r)) == linear_scan(CUBES, r)
