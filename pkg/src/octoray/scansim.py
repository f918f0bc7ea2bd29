"""Synthetic box-world rooms and a pinhole depth camera producing point-cloud scans."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from octoray.pipeline import Scan

# returns are pushed this far (meters) past the surface along the ray so the
# face-ownership rule assigns them to the obstacle voxel from either side
SURFACE_BIAS = 1e-10


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def contains(self, p, strict: bool = False) -> bool:
        if strict:
            return all(lo < c < hi for c, lo, hi in zip(p, self.min, self.max))
        return all(lo <= c <= hi for c, lo, hi in zip(p, self.min, self.max))


@dataclass
class BoxScene:
    bounds: Box
    obstacles: list[Box] = field(default_factory=list)

    def __post_init__(self):
        for ob in self.obstacles:
            if not all(bl <= ol and oh <= bh for bl, ol, oh, bh in
                       zip(self.bounds.min, ob.min, ob.max, self.bounds.max)):
                raise SceneError(f"obstacle {ob} extends outside the scene bounds")

    def obstacle_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.obstacles:
            return np.zeros((0, 3)), np.zeros((0, 3))
        return (np.array([o.min for o in self.obstacles], np.float64),
                np.array([o.max for o in self.obstacles], np.float64))

    def is_free(self, p) -> bool:
        return self.bounds.contains(p, strict=True) and not any(o.contains(p) for o in self.obstacles)


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int = 320
    height: int = 240
    horizontal_fov: float = math.radians(90.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if not 0 < self.horizontal_fov < math.pi:
            raise ValueError("horizontal_fov must lie in (0, pi)")

    @property
    def focal(self) -> float:
        return (self.width / 2) / math.tan(self.horizontal_fov / 2)


@dataclass(frozen=True)
class Pose:
    """Camera position and scalar-first unit quaternion (w, x, y, z).

    The camera looks along body +x with +y to the left and +z up.
    """

    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        q = np.asarray(self.orientation, np.float64)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("orientation quaternion must be normalised")

    @classmethod
    def from_yaw_pitch(cls, position, yaw: float, pitch: float = 0.0) -> "Pose":
        # pitch about body y is positive nose-down in this convention; negate to look up
        rot = Rotation.from_euler("ZY", [yaw, -pitch])
        q = rot.as_quat(scalar_first=True)
        q = q / np.linalg.norm(q)
        return cls(tuple(float(c) for c in position), tuple(float(c) for c in q))

    def rotation(self) -> Rotation:
        return Rotation.from_quat(self.orientation, scalar_first=True)


def pixel_directions(intr: CameraIntrinsics, pose: Pose) -> np.ndarray:
    """Unit world-frame ray per pixel centre, row-major (height, width) order."""
    f = intr.focal
    u = np.arange(intr.width) + 0.5 - intr.width / 2
    v = np.arange(intr.height) + 0.5 - intr.height / 2
    uu, vv = np.meshgrid(u, v)
    body = np.stack([np.full(uu.shape, f), -uu, -vv], axis=-1).reshape(-1, 3)
    body /= np.linalg.norm(body, axis=1, keepdims=True)
    world = pose.rotation().apply(body)
    return world / np.linalg.norm(world, axis=1, keepdims=True)


def nearest_hits(scene: BoxScene, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Distance to the first obstacle entry or bounds exit along each ray."""
    o = np.asarray(origin, np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        bmin = np.asarray(scene.bounds.min)
        bmax = np.asarray(scene.bounds.max)
        far = np.where(dirs > 0, (bmax - o) * inv, (bmin - o) * inv)
        far = np.where(dirs == 0, np.inf, far)
        best = far.min(axis=1)
        mins, maxs = scene.obstacle_arrays()
        for lo, hi in zip(mins, maxs):
            ta = (lo - o) * inv
            tb = (hi - o) * inv
            t_near = np.fmin(ta, tb)
            t_far = np.fmax(ta, tb)
            # axis-parallel rays: inside the slab -> unbounded, outside -> miss
            par = dirs == 0
            inside = (o >= lo) & (o <= hi)
            t_near = np.where(par, np.where(inside, -np.inf, np.inf), t_near)
            t_far = np.where(par, np.where(inside, np.inf, -np.inf), t_far)
            enter = t_near.max(axis=1)
            leave = t_far.min(axis=1)
            hit = (enter <= leave) & (enter > 0)
            best = np.where(hit & (enter < best), enter, best)
    return best


def render_depth_scan(scene: BoxScene, pose: Pose, intrinsics: CameraIntrinsics,
                      max_range: float = math.inf, jitter_sigma: float = 0.0,
                      rng: np.random.Generator | None = None) -> Scan:
    """Pinhole depth scan; pixels whose first hit lies beyond ``max_range`` return no point."""
    p = np.asarray(pose.position, np.float64)
    if not scene.bounds.contains(p, strict=True):
        raise SceneError(f"camera position {tuple(p)} is outside the scene bounds")
    for ob in scene.obstacles:
        if ob.contains(p):
            raise SceneError(f"camera position {tuple(p)} is inside obstacle {ob}")
    dirs = pixel_directions(intrinsics, pose)
    depth = nearest_hits(scene, p, dirs)
    keep = np.isfinite(depth) & (depth <= max_range)
    depth = depth[keep] + SURFACE_BIAS
    if jitter_sigma > 0:
        rng = rng or np.random.default_rng(0)
        depth = np.maximum(depth + rng.normal(0.0, jitter_sigma, depth.shape), SURFACE_BIAS)
    points = p + dirs[keep] * depth[:, None]
    return Scan(p, points)


# coarse camera used to reject blocked views
_PROBE = CameraIntrinsics(16, 12)


def make_room_scene(seed: int, obstacle_count: int, size=(5.0, 4.0, 2.5), grain: float = 0.1) -> BoxScene:
    """Seeded room with floor-standing and wall-mounted boxes snapped to ``grain``."""
    if obstacle_count < 0:
        raise ValueError("obstacle_count must be non-negative")
    rng = np.random.default_rng(seed)
    sx, sy, sz = size
    bounds = Box((-sx / 2, -sy / 2, 0.0), (sx / 2, sy / 2, sz))

    def snap(v):
        return round(round(v / grain) * grain, 10)

    obstacles = []
    for i in range(obstacle_count):
        w, d = rng.uniform(0.3, 1.6, 2)
        if i % 3 == 2:
            # shelf hanging on a wall
            h = rng.uniform(0.2, 0.6)
            z0 = rng.uniform(0.8, sz - h - 0.2)
            along_x = rng.random() < 0.5
            if along_x:
                x0 = rng.uniform(-sx / 2, sx / 2 - w)
                y0 = -sy / 2 if rng.random() < 0.5 else sy / 2 - 0.4
                lo, hi = (x0, y0, z0), (x0 + w, y0 + 0.4, z0 + h)
            else:
                y0 = rng.uniform(-sy / 2, sy / 2 - d)
                x0 = -sx / 2 if rng.random() < 0.5 else sx / 2 - 0.4
                lo, hi = (x0, y0, z0), (x0 + 0.4, y0 + d, z0 + h)
        else:
            h = rng.uniform(0.4, 2.0)
            x0 = rng.uniform(-sx / 2, sx / 2 - w)
            y0 = rng.uniform(-sy / 2, sy / 2 - d)
            lo, hi = (x0, y0, 0.0), (x0 + w, y0 + d, h)
        lo = tuple(max(snap(c), b) for c, b in zip(lo, bounds.min))
        hi = tuple(min(snap(c), b) for c, b in zip(hi, bounds.max))
        if all(a < b for a, b in zip(lo, hi)):
            obstacles.append(Box(lo, hi))
    return BoxScene(bounds, obstacles)


def make_view_poses(scene: BoxScene, count: int, seed: int, clearance: float = 0.3,
                    min_view_depth: float = 1.5) -> list[Pose]:
    """Seeded camera poses in free space, away from walls and obstacles, facing into the room."""
    rng = np.random.default_rng(seed)
    lo = np.asarray(scene.bounds.min) + clearance
    hi = np.asarray(scene.bounds.max) - clearance
    poses = []
    attempts = 0
    while len(poses) < count:
        attempts += 1
        if attempts > 10000 * max(count, 1):
            raise SceneError("could not place camera poses in free space")
        p = rng.uniform(lo, hi)
        p[2] = rng.uniform(max(lo[2], 0.6), min(hi[2], 1.8))
        near = [Box(tuple(np.asarray(o.min) - clearance), tuple(np.asarray(o.max) + clearance))
                for o in scene.obstacles]
        if any(b.contains(p) for b in near):
            continue
        # face roughly across the room so every view sees a comparable amount of it
        c = 0.5 * (np.asarray(scene.bounds.min) + np.asarray(scene.bounds.max))
        yaw = math.atan2(c[1] - p[1], c[0] - p[0]) + rng.uniform(-0.7, 0.7)
        pose = Pose.from_yaw_pitch(p, yaw=yaw, pitch=rng.uniform(-0.3, 0.1))
        # skip views blocked by a nearby obstacle
        depth = nearest_hits(scene, p, pixel_directions(_PROBE, pose))
        if np.median(depth) < min_view_depth:
            continue
        poses.append(pose)
    return poses
