"""Binary little-endian formats for scans, scenes and maps, plus JSON-lines metrics.

Layouts (all integers unsigned, all floats IEEE-754 binary64, little-endian):

scan   : magic "VXSCAN1\\0" | u16 version | f64 resolution hint (NaN = none)
         | 3 x f64 sensor origin | f64 max range (inf = none) | u64 n | n x (x, y, z) f64
scene  : magic "VXSCENE\\0" | u16 version | 6 x f64 bounds (min, max) | u64 n | n x 6 f64
map    : magic "VXMAP1\\0\\0" | u16 version | f64 resolution | u8 max_depth | 3 x f64 origin
         | 6 x f64 (l_hit, l_miss, l_min, l_max, occ_threshold, free_threshold) | u64 n
         | n x record(u8 depth, 3 x u32 key, f64 log-odds), depth-first leaf order
metrics: one JSON object per line, each carrying "schema_version"
"""

from __future__ import annotations

import json
import math
import os
import struct
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from octoray.geometry import GridSpec
from octoray.octree import OccupancyOctree, OccupancyParams
from octoray.pipeline import Scan
from octoray.scansim import Box, BoxScene

PathLike = Union[str, os.PathLike]

VERSION = 1
METRICS_SCHEMA_VERSION = 1

SCAN_MAGIC = b"VXSCAN1\0"
SCENE_MAGIC = b"VXSCENE\0"
MAP_MAGIC = b"VXMAP1\0\0"

_SCAN_HEADER = struct.Struct("<8sHd3ddQ")
_SCENE_HEADER = struct.Struct("<8sH6dQ")
_MAP_HEADER = struct.Struct("<8sHdB3d6dQ")
_MAP_RECORD = np.dtype([("depth", "<u1"), ("key", "<u4", (3,)), ("value", "<f8")])


class FormatError(ValueError):
    """Unreadable or invalid file; ``kind`` is one of magic, version, truncated, invariant."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


def _header(data: bytes, layout: struct.Struct, magic: bytes, what: str) -> tuple:
    if len(data) < len(magic) or data[:len(magic)] != magic:
        raise FormatError("magic", f"not a {what} file")
    if len(data) < layout.size:
        raise FormatError("truncated", f"{what} header needs {layout.size} bytes, got {len(data)}")
    fields = layout.unpack_from(data)
    if fields[1] != VERSION:
        raise FormatError("version", f"unsupported {what} version {fields[1]}")
    return fields


def _body(data: bytes, offset: int, dtype: np.dtype, count: int, what: str) -> np.ndarray:
    need = offset + count * dtype.itemsize
    if len(data) < need:
        raise FormatError("truncated", f"{what} body needs {need} bytes, got {len(data)}")
    if len(data) > need:
        raise FormatError("invariant", f"{len(data) - need} trailing bytes after {what} body")
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset)


# ---------------------------------------------------------------- scans


def encode_scan(scan: Scan, resolution_hint: float | None = None) -> bytes:
    pts = np.ascontiguousarray(scan.points, dtype="<f8").reshape(-1, 3)
    hint = math.nan if resolution_hint is None else float(resolution_hint)
    max_range = math.inf if scan.max_range is None else float(scan.max_range)
    head = _SCAN_HEADER.pack(SCAN_MAGIC, VERSION, hint, *map(float, scan.sensor_origin), max_range,
                             pts.shape[0])
    return head + pts.tobytes()


def decode_scan(data: bytes) -> tuple[Scan, float | None]:
    """Returns the scan and its resolution hint (None when absent)."""
    _, _, hint, ox, oy, oz, max_range, n = _header(data, _SCAN_HEADER, SCAN_MAGIC, "scan")
    pts = _body(data, _SCAN_HEADER.size, np.dtype("<f8"), 3 * n, "scan").reshape(n, 3)
    scan = Scan((ox, oy, oz), pts.astype(np.float64), None if math.isinf(max_range) else max_range)
    return scan, None if math.isnan(hint) else hint


def write_scan(path: PathLike, scan: Scan, resolution_hint: float | None = None) -> None:
    Path(path).write_bytes(encode_scan(scan, resolution_hint))


def read_scan(path: PathLike) -> Scan:
    return decode_scan(Path(path).read_bytes())[0]


# ---------------------------------------------------------------- scenes


def encode_scene(scene: BoxScene) -> bytes:
    boxes = np.array([[*b.min, *b.max] for b in scene.obstacles], dtype="<f8").reshape(-1, 6)
    bounds = (*scene.bounds.min, *scene.bounds.max)
    return _SCENE_HEADER.pack(SCENE_MAGIC, VERSION, *map(float, bounds), boxes.shape[0]) + boxes.tobytes()


def decode_scene(data: bytes) -> BoxScene:
    fields = _header(data, _SCENE_HEADER, SCENE_MAGIC, "scene")
    bounds, n = fields[2:8], fields[8]
    rows = _body(data, _SCENE_HEADER.size, np.dtype("<f8"), 6 * n, "scene").reshape(n, 6)
    try:
        return BoxScene(Box(tuple(bounds[:3]), tuple(bounds[3:])),
                        [Box(tuple(map(float, r[:3])), tuple(map(float, r[3:]))) for r in rows])
    except ValueError as exc:
        raise FormatError("invariant", str(exc)) from exc


def write_scene(path: PathLike, scene: BoxScene) -> None:
    Path(path).write_bytes(encode_scene(scene))


def read_scene(path: PathLike) -> BoxScene:
    return decode_scene(Path(path).read_bytes())


# ---------------------------------------------------------------- maps


def encode_map(tree: OccupancyOctree) -> bytes:
    g, p = tree.grid, tree.params
    keys, depths, values = tree.stored_leaves()
    rec = np.zeros(keys.shape[0], dtype=_MAP_RECORD)
    rec["depth"] = depths
    rec["key"] = keys
    rec["value"] = values
    head = _MAP_HEADER.pack(MAP_MAGIC, VERSION, g.resolution, g.max_depth, *g.origin,
                            p.l_hit, p.l_miss, p.l_min, p.l_max, p.occ_threshold, p.free_threshold,
                            rec.shape[0])
    return head + rec.tobytes()


def decode_map(data: bytes) -> OccupancyOctree:
    fields = _header(data, _MAP_HEADER, MAP_MAGIC, "map")
    resolution, max_depth, origin, params, n = fields[2], fields[3], fields[4:7], fields[7:13], fields[13]
    rec = _body(data, _MAP_HEADER.size, _MAP_RECORD, n, "map")
    try:
        grid = GridSpec(resolution, max_depth, tuple(origin))
        return OccupancyOctree.from_leaves(grid, OccupancyParams(*params), rec["key"].astype(np.int64),
                                           rec["depth"].astype(np.int64), rec["value"])
    except ValueError as exc:
        raise FormatError("invariant", str(exc)) from exc


def write_map(path: PathLike, tree: OccupancyOctree) -> None:
    Path(path).write_bytes(encode_map(tree))


def read_map(path: PathLike) -> OccupancyOctree:
    return decode_map(Path(path).read_bytes())


# ---------------------------------------------------------------- metrics


def write_metrics(path: PathLike, records: Iterable[dict]) -> int:
    """Append records as JSON lines; returns the number written."""
    n = 0
    with open(path, "a", encoding="utf-8") as fh:
        for rec in records:
            row = {"schema_version": METRICS_SCHEMA_VERSION, **rec}
            fh.write(json.dumps(row, sort_keys=True) + "\n")
            n += 1
    return n


def read_metrics(path: PathLike) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError("invariant", f"metrics line {lineno}: {exc}") from exc
            if row.get("schema_version") != METRICS_SCHEMA_VERSION:
                raise FormatError("version", f"metrics line {lineno}: schema {row.get('schema_version')!r}")
            out.append(row)
    return out
