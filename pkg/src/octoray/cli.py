"""Command-line driver: simulate scans, build maps, benchmark both inserters, diff maps."""

from __future__ import annotations

import argparse
import math
import statistics
import string
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from octoray import mapio
from octoray.geometry import GridSpec
from octoray.octree import OccupancyOctree, OccupancyParams, classification_diff
from octoray.pipeline import (EmptyScanError, PipelineStats, Scan, baseline_updates, generate_rays, insert_scan,
                              insert_scan_baseline, integrate_scan, shoot_scan)
from octoray.scansim import CameraIntrinsics, make_room_scene, make_view_poses, render_depth_scan

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_VERIFY = 4

MODES = ("pipeline", "baseline")
SCENE_FILE = "scene.vxscene"
MIN_BENCH_REPEATS = 5


class UsageError(Exception):
    pass


class VerificationError(Exception):
    pass


@dataclass
class RunConfig:
    resolution: float = 0.05
    max_depth: int = 16
    workers: int = 8
    mode: str = "pipeline"
    params: OccupancyParams = field(default_factory=OccupancyParams)
    max_range: Optional[float] = None
    seed: int = 42
    views: int = 6
    obstacles: int = 10
    repeats: int = 5
    in_path: Optional[Path] = None
    out_path: Optional[Path] = None

    def validate(self) -> "RunConfig":
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise UsageError("--resolution must be a positive number")
        if not 1 <= self.max_depth <= 21:
            raise UsageError("--max-depth must be in [1, 21]")
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")
        if self.mode not in MODES:
            raise UsageError(f"--mode must be one of {', '.join(MODES)}")
        if self.max_range is not None and not self.max_range > 0:
            raise UsageError("--max-range must be positive")
        if self.views < 0:
            raise UsageError("--views must be >= 0")
        if self.obstacles < 0:
            raise UsageError("--obstacles must be >= 0")
        if self.repeats < 1:
            raise UsageError("--repeats must be >= 1")
        return self

    def grid(self) -> GridSpec:
        return GridSpec.centered(self.resolution, self.max_depth)


def view_label(i: int) -> str:
    """(a), (b), ... for the first 26 views, then (v26), (v27), ..."""
    return f"({string.ascii_lowercase[i]})" if i < 26 else f"(v{i})"


def scan_name(i: int) -> str:
    return f"view_{i:02d}.vxscan"


def simulate_views(cfg: RunConfig):
    scene = make_room_scene(cfg.seed, cfg.obstacles)
    poses = make_view_poses(scene, cfg.views, cfg.seed) if cfg.views else []
    intr = CameraIntrinsics()
    max_range = math.inf if cfg.max_range is None else cfg.max_range
    return scene, [render_depth_scan(scene, p, intr, max_range=max_range) for p in poses]


def load_scans(path: Path) -> list[Scan]:
    if path.is_dir():
        files = sorted(path.glob("*.vxscan"))
        if not files:
            raise UsageError(f"no .vxscan files in {path}")
    elif path.exists():
        files = [path]
    else:
        raise UsageError(f"{path} does not exist")
    return [mapio.read_scan(f) for f in files]


def _with_range(scan: Scan, max_range: Optional[float]) -> Scan:
    if max_range is None:
        return scan
    return Scan(scan.sensor_origin, scan.points, max_range)


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig) -> list[Path]:
    """Write the seeded scene and one scan per view to ``cfg.out_path``."""
    if cfg.out_path is None:
        raise UsageError("simulate needs --out DIR")
    out = cfg.out_path
    out.mkdir(parents=True, exist_ok=True)
    scene, scans = simulate_views(cfg)
    mapio.write_scene(out / SCENE_FILE, scene)
    written = [out / SCENE_FILE]
    for i, scan in enumerate(scans):
        mapio.write_scan(out / scan_name(i), scan, cfg.resolution)
        written.append(out / scan_name(i))
    return written


def cmd_build(cfg: RunConfig) -> tuple[OccupancyOctree, list[PipelineStats]]:
    """Insert the scans in order with the chosen mode; write the map and its metrics."""
    if cfg.in_path is None or cfg.out_path is None:
        raise UsageError("build needs --in SCANS and --out MAP")
    scans = load_scans(cfg.in_path)
    tree = OccupancyOctree(cfg.grid(), cfg.params)
    all_stats = []
    for scan in scans:
        scan = _with_range(scan, cfg.max_range)
        if cfg.mode == "pipeline":
            stats = insert_scan(tree, scan, workers=cfg.workers)
        else:
            _, stats = insert_scan_baseline(tree, scan)
        all_stats.append(stats)
    cfg.out_path.parent.mkdir(parents=True, exist_ok=True)
    mapio.write_map(cfg.out_path, tree)
    metrics = cfg.out_path.with_suffix(".metrics.jsonl")
    mapio.write_metrics(metrics, ({"kind": "scan", "scan": i, **s.to_record()} for i, s in enumerate(all_stats)))
    return tree, all_stats


@dataclass
class ViewResult:
    label: str
    leaf_cells: int
    rays: int
    baseline_shoot: float
    baseline_integrate: float
    # per worker count: median build, shoot, merge, integrate (seconds)
    pipeline: dict = field(default_factory=dict)
    map_bytes: bytes = b""

    def pipeline_total(self, w: int) -> float:
        p = self.pipeline[w]
        return p["build"] + p["ray_shoot"] + p["merge"]

    def speedup(self, w: int) -> float:
        """Baseline ray shooting over pipeline build + shoot + merge (integration is shared)."""
        return self.baseline_shoot / self.pipeline_total(w)


def worker_counts(max_workers: int) -> list[int]:
    out, w = [], 1
    while w < max_workers:
        out.append(w)
        w *= 2
    out.append(max_workers)
    return out


def bench_view(label: str, scan: Scan, cfg: RunConfig, counts: Sequence[int], records: list) -> ViewResult:
    """Time one view: map = that view's scan inserted into an empty tree, then shoot it again."""
    base_tree = OccupancyOctree(cfg.grid(), cfg.params)
    insert_scan_baseline(base_tree, scan)
    rays = generate_rays(scan)
    res = ViewResult(label, base_tree.leaf_count(), len(rays), 0.0, 0.0)

    shoots, integrates, ref = [], [], None
    for rep in range(cfg.repeats):
        updates, st = baseline_updates(rays, base_tree.grid)
        t = base_tree.copy()
        st.integrate = integrate_scan(t, updates).integrate
        shoots.append(st.ray_shoot)
        integrates.append(st.integrate)
        records.append({**st.to_record(), "kind": "bench_run", "view": label, "repeat": rep,
                        "leaf_cells": res.leaf_cells})
        ref = mapio.encode_map(t)
    res.baseline_shoot = statistics.median(shoots)
    res.baseline_integrate = statistics.median(integrates)
    res.map_bytes = ref

    for w in counts:
        phases = {"build": [], "ray_shoot": [], "merge": [], "integrate": []}
        for rep in range(cfg.repeats):
            updates, st = shoot_scan(base_tree, scan, workers=w)
            t = base_tree.copy()
            st.integrate = integrate_scan(t, updates).integrate
            for k in phases:
                phases[k].append(getattr(st, k))
            records.append({**st.to_record(), "kind": "bench_run", "view": label, "repeat": rep,
                            "leaf_cells": res.leaf_cells})
            if mapio.encode_map(t) != ref:
                raise VerificationError(f"view {label}: pipeline map with {w} workers differs from baseline map")
        res.pipeline[w] = {k: statistics.median(v) for k, v in phases.items()}
    return res


def format_report(results: list[ViewResult], counts: Sequence[int], repeats: int) -> str:
    ms = lambda s: f"{1e3 * s:10.2f}"
    head = f"{'':34s}" + "".join(f"{r.label:>10s}" for r in results)
    rule = "-" * len(head)
    lines = [f"Ray shooting performance (median of {repeats} repeats, times in ms)", rule, head, rule,
             f"{'# leaf cells in octree':34s}" + "".join(f"{r.leaf_cells:10d}" for r in results),
             f"{'# rays':34s}" + "".join(f"{r.rays:10d}" for r in results),
             f"{'Baseline (serial)  ray shooting':34s}" + "".join(ms(r.baseline_shoot) for r in results),
             f"{'                   integrate':34s}" + "".join(ms(r.baseline_integrate) for r in results)]
    for w in counts:
        tag = f"Pipeline ({w} worker{'s' if w > 1 else ''})"
        lines += [rule,
                  f"{tag + '  build':34s}" + "".join(ms(r.pipeline[w]['build']) for r in results),
                  f"{'  ray shooting':34s}" + "".join(ms(r.pipeline[w]['ray_shoot']) for r in results),
                  f"{'  merge + integrate':34s}"
                  + "".join(ms(r.pipeline[w]['merge'] + r.pipeline[w]['integrate']) for r in results),
                  f"{'  speedup vs baseline':34s}" + "".join(f"{r.speedup(w):9.2f}x" for r in results)]
    lines.append(rule)
    return "\n".join(lines)


def cmd_bench(cfg: RunConfig) -> tuple[list[ViewResult], str]:
    """Both modes x worker counts over every view; writes metrics, report and per-view maps."""
    if cfg.repeats < MIN_BENCH_REPEATS:
        raise UsageError(f"bench needs --repeats >= {MIN_BENCH_REPEATS}")
    if cfg.in_path is not None:
        scans = load_scans(cfg.in_path)
    else:
        scans = simulate_views(cfg)[1]
    if not scans:
        raise UsageError("nothing to benchmark (0 views)")
    counts = worker_counts(cfg.workers)
    warm = OccupancyOctree(cfg.grid(), cfg.params)  # untimed pass so JIT loading stays out of the medians
    insert_scan_baseline(warm, scans[0])
    insert_scan(warm, scans[0], workers=counts[-1])
    records: list[dict] = []
    results = []
    for i, scan in enumerate(scans):
        results.append(bench_view(view_label(i), _with_range(scan, cfg.max_range), cfg, counts, records))
    for r in results:
        for w in counts:
            records.append({"kind": "bench_summary", "view": r.label, "leaf_cells": r.leaf_cells, "rays": r.rays,
                            "workers": w, "baseline_ray_shoot": r.baseline_shoot, **r.pipeline[w],
                            "speedup": r.speedup(w)})
    report = format_report(results, counts, cfg.repeats)
    if cfg.out_path is not None:
        out = cfg.out_path
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.metrics.jsonl").unlink(missing_ok=True)
        mapio.write_metrics(out / "bench.metrics.jsonl", records)
        (out / "report.txt").write_text(report + "\n")
        for i, r in enumerate(results):
            (out / f"view_{i:02d}.vxmap").write_bytes(r.map_bytes)
    return results, report


def cmd_diff(path_a: Path, path_b: Path) -> list:
    return classification_diff(mapio.read_map(path_a), mapio.read_map(path_b))


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--resolution", type=float, default=0.05, help="voxel edge in metres (default 0.05)")
    common.add_argument("--max-depth", type=int, default=16, help="octree depth (default 16)")
    common.add_argument("--workers", type=int, default=8,
                        help="ray-shooting workers; bench sweeps 1, 2, 4, ... up to this (default 8)")
    common.add_argument("--mode", choices=MODES, default="pipeline", help="inserter for build")
    common.add_argument("--views", type=int, default=6, help="simulated viewpoints (default 6)")
    common.add_argument("--seed", type=int, default=42, help="scene and pose seed (default 42)")
    common.add_argument("--obstacles", type=int, default=10, help="furniture boxes in the room (default 10)")
    common.add_argument("--max-range", type=float, default=None, help="sensor range in metres (default unlimited)")
    common.add_argument("--in", dest="in_path", type=Path, default=None, help="input scan file or directory (build default: scans)")
    common.add_argument("--out", dest="out_path", type=Path, default=None, help="output path (simulate: scans, build: map.vxmap, bench: none)")
    common.add_argument("--repeats", type=int, default=5, help="bench repetitions per configuration (default 5)")

    parser = argparse.ArgumentParser(prog="octoray", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write a seeded room scene and its depth scans")
    sub.add_parser("build", parents=[common], help="insert scans into a map")
    sub.add_parser("bench", parents=[common], help="time baseline vs pipeline ray shooting per view")
    d = sub.add_parser("diff", help="compare two maps voxel classification")
    d.add_argument("map_a", type=Path)
    d.add_argument("map_b", type=Path)
    return parser


DEFAULT_PATHS = {"simulate": (None, Path("scans")), "build": (Path("scans"), Path("map.vxmap")),
                 "bench": (None, None)}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    in_default, out_default = DEFAULT_PATHS[args.command]
    args.in_path = args.in_path or in_default
    args.out_path = args.out_path or out_default
    return RunConfig(resolution=args.resolution, max_depth=args.max_depth, workers=args.workers, mode=args.mode,
                     max_range=args.max_range, seed=args.seed, views=args.views, obstacles=args.obstacles,
                     repeats=args.repeats, in_path=args.in_path, out_path=args.out_path).validate()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "diff":
            diffs = cmd_diff(args.map_a, args.map_b)
            for r in diffs:
                print(f"key={tuple(r.key)} depth={r.depth} {r.label_a.value} -> {r.label_b.value}")
            print(f"{len(diffs)} differing region(s)")
            return EXIT_OK if not diffs else EXIT_VERIFY
        cfg = config_from_args(args)
        if args.command == "simulate":
            for p in cmd_simulate(cfg):
                print(p)
        elif args.command == "build":
            tree, stats = cmd_build(cfg)
            for i, s in enumerate(stats):
                print(f"scan {i}: build {1e3 * s.build:.2f} ms, shoot {1e3 * s.ray_shoot:.2f} ms, "
                      f"merge+integrate {1e3 * s.transfer:.2f} ms, leaf cells {s.leaf_cells}")
            print(f"wrote {cfg.out_path} ({tree.leaf_count()} leaf cells)")
        elif args.command == "bench":
            print(cmd_bench(cfg)[1])
    except (UsageError, EmptyScanError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except mapio.FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
