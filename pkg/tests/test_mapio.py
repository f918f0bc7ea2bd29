from __future__ import annotations

import math
import struct

import numpy as np
import pytest

from octoray import mapio
from octoray.geometry import GridSpec
from octoray.octree import OccupancyOctree, OccupancyParams, iter_all_keys
from octoray.pipeline import EmptyScanError, PipelineStats, Scan, generate_rays, insert_scan_baseline
from octoray.scansim import CameraIntrinsics, make_room_scene, make_view_poses, render_depth_scan

TOY = GridSpec(1.0, 3)


def random_update_tree(seed: int, grid=GridSpec.centered(0.05, 16), n=1000) -> OccupancyOctree:
    rng = np.random.default_rng(seed)
    t = OccupancyOctree(grid, OccupancyParams(l_min=-1.5, l_max=2.0))
    base = grid.size // 2
    keys = base + rng.integers(-20, 20, (n, 3))
    t.apply_deltas(keys, rng.choice([t.params.l_hit, t.params.l_miss], n))
    t.prune()
    return t


class TestMap:
    def test_empty_round_trip(self):
        t = OccupancyOctree(TOY)
        u = mapio.decode_map(mapio.encode_map(t))
        assert u.is_empty and u.grid == TOY and u.params == t.params

    def test_random_tree_round_trip(self, tmp_path):
        t = random_update_tree(0)
        mapio.write_map(tmp_path / "m.vxmap", t)
        u = mapio.read_map(tmp_path / "m.vxmap")
        assert u == t
        assert u.leaf_cells() == t.leaf_cells()
        assert mapio.encode_map(u) == mapio.encode_map(t)

    def test_classify_identical_on_toy_grid(self):
        t = OccupancyOctree(TOY)
        rng = np.random.default_rng(1)
        t.apply_deltas(rng.integers(0, 8, (300, 3)), rng.choice([t.params.l_hit, t.params.l_miss], 300))
        u = mapio.decode_map(mapio.encode_map(t))
        keys = np.array(list(iter_all_keys(TOY)))
        assert np.array_equal(u.classify_many(keys), t.classify_many(keys))

    def test_corrupt_magic(self):
        data = bytearray(mapio.encode_map(random_update_tree(2)))
        data[0:1] = b"X"
        with pytest.raises(mapio.FormatError) as e:
            mapio.decode_map(bytes(data))
        assert e.value.kind == "magic"

    def test_wrong_version(self):
        data = bytearray(mapio.encode_map(OccupancyOctree(TOY)))
        struct.pack_into("<H", data, 8, 99)
        with pytest.raises(mapio.FormatError) as e:
            mapio.decode_map(bytes(data))
        assert e.value.kind == "version"

    @pytest.mark.parametrize("cut", [1, 13, 50, 97])
    def test_truncated(self, cut):
        data = mapio.encode_map(random_update_tree(3))
        with pytest.raises(mapio.FormatError) as e:
            mapio.decode_map(data[:-cut])
        assert e.value.kind == "truncated"

    def test_trailing_bytes(self):
        with pytest.raises(mapio.FormatError) as e:
            mapio.decode_map(mapio.encode_map(OccupancyOctree(TOY)) + b"\0")
        assert e.value.kind == "invariant"

    def test_invariant_violation(self):
        t = OccupancyOctree(TOY)
        t.update_voxel((3, 3, 3), True)
        data = bytearray(mapio.encode_map(t))
        # move the only leaf's key out of the 8^3 workspace
        struct.pack_into("<I", data, len(data) - 20, 9)
        with pytest.raises(mapio.FormatError) as e:
            mapio.decode_map(bytes(data))
        assert e.value.kind == "invariant"

    def test_format_error_is_value_error(self):
        with pytest.raises(ValueError):
            mapio.decode_map(b"")


class TestScan:
    def test_full_frame_bit_identical(self, tmp_path):
        scene = make_room_scene(42, 10)
        scan = render_depth_scan(scene, make_view_poses(scene, 1, 42)[0], CameraIntrinsics())
        assert len(scan) == 76_800
        mapio.write_scan(tmp_path / "s.vxscan", scan, 0.05)
        raw = (tmp_path / "s.vxscan").read_bytes()
        back, hint = mapio.decode_scan(raw)
        assert hint == 0.05
        assert back.points.tobytes() == scan.points.tobytes()
        assert back.sensor_origin.tobytes() == scan.sensor_origin.tobytes()
        assert mapio.encode_scan(back, hint) == raw

    def test_max_range_kept(self):
        scan = Scan((0, 0, 0), [(1, 2, 3)], max_range=4.5)
        back, hint = mapio.decode_scan(mapio.encode_scan(scan))
        assert back.max_range == 4.5 and hint is None

    def test_zero_point_scan(self, tmp_path):
        mapio.write_scan(tmp_path / "e.vxscan", Scan((1, 2, 3), np.zeros((0, 3))))
        scan = mapio.read_scan(tmp_path / "e.vxscan")
        assert len(scan) == 0
        with pytest.raises(EmptyScanError, match="empty scan"):
            generate_rays(scan)
        with pytest.raises(EmptyScanError):
            insert_scan_baseline(OccupancyOctree(TOY), scan)

    def test_point_count_mismatch(self):
        data = mapio.encode_scan(Scan((0, 0, 0), [(1, 0, 0), (0, 1, 0)]))
        with pytest.raises(mapio.FormatError) as e:
            mapio.decode_scan(data[:-24])
        assert e.value.kind == "truncated"

    def test_corrupt_magic(self):
        with pytest.raises(mapio.FormatError) as e:
            mapio.decode_scan(b"VXMAP1\0\0" + bytes(64))
        assert e.value.kind == "magic"

    def test_little_endian_layout(self):
        data = mapio.encode_scan(Scan((1.0, 2.0, 3.0), [(4.0, 5.0, 6.0)]), 0.05)
        assert data[:8] == b"VXSCAN1\0"
        magic, version, hint, ox, oy, oz, max_range, n = struct.unpack_from("<8sHd3ddQ", data)
        assert (version, hint, ox, oy, oz, n) == (1, 0.05, 1.0, 2.0, 3.0, 1)
        assert math.isinf(max_range)
        assert struct.unpack_from("<3d", data, len(data) - 24) == (4.0, 5.0, 6.0)


class TestScene:
    def test_round_trip(self, tmp_path):
        scene = make_room_scene(7, 12)
        mapio.write_scene(tmp_path / "s.vxscene", scene)
        assert mapio.read_scene(tmp_path / "s.vxscene") == scene

    def test_obstacle_outside_rejected(self):
        scene = make_room_scene(7, 1)
        data = bytearray(mapio.encode_scene(scene))
        struct.pack_into("<d", data, len(data) - 8, 1e6)
        with pytest.raises(mapio.FormatError) as e:
            mapio.decode_scene(bytes(data))
        assert e.value.kind == "invariant"


class TestMetrics:
    def test_six_records(self, tmp_path):
        path = tmp_path / "m.jsonl"
        stats = [PipelineStats(workers=i + 1, ray_shoot=0.1 * i) for i in range(6)]
        assert mapio.write_metrics(path, (s.to_record() for s in stats)) == 6
        rows = mapio.read_metrics(path)
        assert len(rows) == 6
        assert [r["workers"] for r in rows] == [1, 2, 3, 4, 5, 6]
        assert all(r["schema_version"] == mapio.METRICS_SCHEMA_VERSION for r in rows)

    def test_append_only(self, tmp_path):
        path = tmp_path / "m.jsonl"
        mapio.write_metrics(path, [{"a": 1}])
        mapio.write_metrics(path, [{"a": 2}])
        assert [r["a"] for r in mapio.read_metrics(path)] == [1, 2]

    def test_bad_schema(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"schema_version": 99}\n')
        with pytest.raises(mapio.FormatError):
            mapio.read_metrics(path)
