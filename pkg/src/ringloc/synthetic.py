"""Deterministic synthetic worlds, scans and benchmarks with exact ground truth,
plus brute-force reference implementations used as test oracles.

Randomness comes exclusively from numpy's ``PCG64`` bit generator. Per-scan
streams are derived with ``SeedSequence.spawn`` so scans never share a stream.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import EmptyScan
from .features import FeatureBEV
from .poses import Pose3
from .scan_io import PointCloud, ScanRecord, save_cloud, save_poses
from .transforms import Sinogram, _arr, _as3d, cell_centers, tau_axis, theta_axis

RNG_NAME = "numpy.random.PCG64"


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    extent: float = 150.0
    n_walls: int = 110
    n_boxes: int = 60
    n_posts: int = 160
    points_per_m2: float = 3.0
    ground: bool = True
    ground_density_ratio: float = 0.1

    def __post_init__(self):
        if min(self.n_walls, self.n_boxes, self.n_posts) < 0:
            raise ValueError("object counts must be >= 0")
        if not self.points_per_m2 > 0 or not self.extent > 0:
            raise ValueError("density and extent must be positive")


@dataclass(frozen=True)
class SensorSpec:
    range_max: float = 70.0
    dropout: float = 0.0
    noise_sigma: float = 0.02

    def __post_init__(self):
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must lie in [0, 1]")
        if self.noise_sigma < 0 or not self.range_max > 0:
            raise ValueError("noise_sigma >= 0 and range_max > 0 required")


# ---------------------------------------------------------------------------
# surface samplers


def sample_wall(rng: np.random.Generator, p0, p1, height: float, density: float,
                base: float = 0.0) -> np.ndarray:
    """Points on the vertical rectangle from ``p0`` to ``p1`` (planar), ``height`` tall."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    length = float(np.linalg.norm(p1 - p0))
    n = int(round(length * height * density))
    s = rng.random(n)
    z = base + rng.random(n) * height
    xy = p0[None, :] + s[:, None] * (p1 - p0)[None, :]
    return np.column_stack([xy, z])


def sample_box(rng, center, size_xy, height, yaw, density) -> np.ndarray:
    hx, hy = 0.5 * size_xy[0], 0.5 * size_xy[1]
    c, s = math.cos(yaw), math.sin(yaw)
    R = np.array([[c, -s], [s, c]])
    corners = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]]) @ R.T + np.asarray(center)
    parts = [sample_wall(rng, corners[i], corners[(i + 1) % 4], height, density) for i in range(4)]
    n_top = int(round(size_xy[0] * size_xy[1] * density))
    top = (rng.random((n_top, 2)) - 0.5) * np.asarray(size_xy)
    parts.append(np.column_stack([top @ R.T + np.asarray(center), np.full(n_top, height)]))
    return np.vstack(parts)


def sample_post(rng, center, radius, height, density) -> np.ndarray:
    n = int(round(2 * math.pi * radius * height * density))
    phi = rng.random(n) * 2 * math.pi
    z = rng.random(n) * height
    return np.column_stack([center[0] + radius * np.cos(phi), center[1] + radius * np.sin(phi), z])


def generate_scene(spec: SceneSpec) -> PointCloud:
    """World-frame cloud of walls, boxes, posts and optional ground.

    A fixed L-shaped building is added whenever any object is requested so
    that no scene is rotationally symmetric.
    """
    rng = make_rng(spec.seed)
    ext, dens = spec.extent, spec.points_per_m2
    parts = []
    for _ in range(spec.n_walls):
        c = rng.uniform(-ext, ext, 2)
        L = rng.uniform(6.0, 30.0)
        yaw = rng.uniform(0, math.pi)
        d = 0.5 * L * np.array([math.cos(yaw), math.sin(yaw)])
        parts.append(sample_wall(rng, c - d, c + d, rng.uniform(2.0, 8.0), dens))
    for _ in range(spec.n_boxes):
        parts.append(sample_box(rng, rng.uniform(-ext, ext, 2), rng.uniform(3.0, 12.0, 2),
                                rng.uniform(1.5, 6.0), rng.uniform(0, math.pi), dens))
    for _ in range(spec.n_posts):
        parts.append(sample_post(rng, rng.uniform(-ext, ext, 2), rng.uniform(0.15, 0.5),
                                 rng.uniform(3.0, 8.0), dens))
    if spec.n_walls or spec.n_boxes or spec.n_posts:
        parts.append(sample_wall(rng, (12.0, 8.0), (40.0, 8.0), 9.0, dens))
        parts.append(sample_wall(rng, (12.0, 8.0), (12.0, 22.0), 9.0, dens))
    if spec.ground:
        n_g = int(round((2 * ext) ** 2 * dens * spec.ground_density_ratio))
        g = rng.uniform(-ext, ext, (n_g, 2))
        parts.append(np.column_stack([g, np.zeros(n_g)]))
    xyz = np.vstack(parts) if parts else np.zeros((0, 3))
    return PointCloud(xyz, frame_id="world")


def render_scan(world: PointCloud, pose: Pose3, sensor: SensorSpec = SensorSpec(), seed=0) -> PointCloud:
    """Sensor-frame view of ``world`` from ``pose``: planar range crop, noise, dropout."""
    rng = make_rng(seed)
    local = pose.inverse().apply(world.xyz)
    local = local[np.hypot(local[:, 0], local[:, 1]) <= sensor.range_max]
    if sensor.noise_sigma > 0:
        local = local + rng.normal(0.0, sensor.noise_sigma, local.shape)
    if sensor.dropout > 0:
        local = local[rng.random(local.shape[0]) >= sensor.dropout]
    if local.shape[0] == 0:
        raise EmptyScan("render produced no points")
    return PointCloud(local, frame_id="sensor")


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class BenchmarkSet:
    map_scans: list[ScanRecord]
    query_scans: list[ScanRecord]
    gt_rel_poses: dict[int, tuple[int, Pose3]]
    """query id -> (nearest map id, relative pose of the query in that map frame)"""
    meta: dict = field(default_factory=dict)

    def loop_relative_poses(self) -> list[Pose3]:
        poses = [r.pose for r in self.map_scans]
        return [poses[i].inverse() @ poses[(i + 1) % len(poses)] for i in range(len(poses))]

    def map_pose(self, map_id: int) -> Pose3:
        return next(r.pose for r in self.map_scans if r.id == map_id)


def loop_position(s: float, radius: float) -> tuple[np.ndarray, float]:
    phi = s / radius
    return np.array([radius * math.cos(phi), radius * math.sin(phi)]), phi + 0.5 * math.pi


def make_benchmark(scene: SceneSpec = SceneSpec(), place_density: float = 20.0, query_spacing: float = 5.0,
                   sensor: SensorSpec = SensorSpec(), seed: int = 0, loop_length: float = 200.0,
                   lateral_offset: float = 3.0, sensor_height: float = 1.8,
                   world: Optional[PointCloud] = None) -> BenchmarkSet:
    """Map scans every ``place_density`` meters around a circular loop and
    queries every ``query_spacing`` meters with random yaw and lateral offset."""
    if not (place_density > 0 and query_spacing > 0 and loop_length > 0):
        raise ValueError("spacings and loop length must be positive")
    world = generate_scene(scene) if world is None else world
    radius = loop_length / (2 * math.pi)
    n_map = int(math.floor(loop_length / place_density + 1e-9))
    n_query = int(math.floor(loop_length / query_spacing + 1e-9))
    ss = np.random.SeedSequence(seed)
    pose_seq, *scan_seqs = ss.spawn(1 + n_map + n_query)
    prng = make_rng(pose_seq)

    map_scans = []
    for i in range(n_map):
        xy, yaw = loop_position(i * place_density, radius)
        pose = Pose3.from_xyz_yaw(xy[0], xy[1], sensor_height, yaw)
        map_scans.append(ScanRecord(i, render_scan(world, pose, sensor, scan_seqs[i]), pose))

    query_scans, gt = [], {}
    map_xy = np.array([r.pose.translation[:2] for r in map_scans])
    for j in range(n_query):
        s = j * query_spacing
        lat = prng.uniform(-lateral_offset, lateral_offset)
        yaw = prng.uniform(0.0, 2 * math.pi)
        phi = s / radius
        xy = (radius + lat) * np.array([math.cos(phi), math.sin(phi)])
        pose = Pose3.from_xyz_yaw(xy[0], xy[1], sensor_height, yaw)
        query_scans.append(ScanRecord(j, render_scan(world, pose, sensor, scan_seqs[n_map + j]), pose))
        nearest = int(np.argmin(np.linalg.norm(map_xy - xy, axis=1)))
        gt[j] = (map_scans[nearest].id, map_scans[nearest].pose.inverse() @ pose)

    meta = {"scene": asdict(scene), "sensor": asdict(sensor), "seed": seed, "rng": RNG_NAME,
            "place_density": place_density, "query_spacing": query_spacing, "loop_length": loop_length,
            "lateral_offset": lateral_offset, "sensor_height": sensor_height}
    return BenchmarkSet(map_scans, query_scans, gt, meta)


def save_benchmark(bench: BenchmarkSet, out_dir) -> Path:
    """Write ``map/`` and ``queries/`` (scans as bin_f32 + poses.csv) and ``manifest.json``."""
    out = Path(out_dir)
    for name, recs in (("map", bench.map_scans), ("queries", bench.query_scans)):
        scans = out / name / "scans"
        scans.mkdir(parents=True, exist_ok=True)
        for r in recs:
            save_cloud(r.cloud, scans / f"{r.id:06d}.bin")
        save_poses([(r.id, r.pose) for r in recs], out / name / "poses.csv")
    manifest = dict(bench.meta)
    manifest["n_map"] = len(bench.map_scans)
    manifest["n_query"] = len(bench.query_scans)
    manifest["gt_nearest_map"] = {str(q): m for q, (m, _) in bench.gt_rel_poses.items()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


# ---------------------------------------------------------------------------
# brute-force oracles (small inputs only)


def oracle_radon(bev: FeatureBEV, n_theta: int | None = None, n_tau: int | None = None) -> Sinogram:
    """Rotate-and-sum Radon transform by explicit loops.

    Every cell's mass is pushed bilinearly onto a rotated ``n_tau x n_tau``
    grid (spacing ``dtau``, wrapping at the border) and the rotated image is
    summed along its second axis.
    """
    grid = _as3d(bev.grid)
    cfg = bev.config
    n_theta = cfg.size if n_theta is None else n_theta
    n_tau = cfg.size if n_tau is None else n_tau
    theta = theta_axis(n_theta)
    tau = tau_axis(n_tau, cfg.extent)
    dtau = tau[1] - tau[0]
    centers = cell_centers(cfg)
    out = np.zeros((n_theta, n_tau, grid.shape[2]))
    for j, th in enumerate(theta):
        c, s = math.cos(th), math.sin(th)
        img = np.zeros((n_tau, n_tau, grid.shape[2]))
        for ix in range(grid.shape[0]):
            for iy in range(grid.shape[1]):
                m = grid[ix, iy]
                if not np.any(m):
                    continue
                x, y = centers[ix], centers[iy]
                u = (c * x + s * y) / dtau + n_tau // 2
                v = (-s * x + c * y) / dtau + n_tau // 2
                u0, v0 = math.floor(u), math.floor(v)
                fu, fv = u - u0, v - v0
                for du, wu in ((0, 1 - fu), (1, fu)):
                    for dv, wv in ((0, 1 - fv), (1, fv)):
                        img[(u0 + du) % n_tau, (v0 + dv) % n_tau] += wu * wv * m
        out[j] = img.sum(axis=1)
    return Sinogram(out, theta, tau)


def oracle_corr1d(a, b) -> np.ndarray:
    """``c[k] = sum_j sum_rest a[(j + k) % n] * b[j]`` by direct summation."""
    A, B = _arr(a), _arr(b)
    n = A.shape[0]
    A2 = A.reshape(n, -1)
    B2 = B.reshape(n, -1)
    out = np.zeros(n)
    for k in range(n):
        total = 0.0
        for j in range(n):
            total += float(np.dot(A2[(j + k) % n], B2[j]))
        out[k] = total
    return out


def oracle_corr2d(a, b) -> np.ndarray:
    """``c[kx, ky] = sum_p a[p] * b[(p + k) % shape]`` over all cells and channels."""
    A, B = _as3d(_arr(a)), _as3d(_arr(b))
    h, w = A.shape[:2]
    out = np.zeros((h, w))
    for kx in range(h):
        rows = (np.arange(h) + kx) % h
        Bx = B[rows]
        for ky in range(w):
            cols = (np.arange(w) + ky) % w
            out[kx, ky] = float(np.sum(A * Bx[:, cols]))
    return out


__all__ = [
    "SceneSpec", "SensorSpec", "BenchmarkSet", "generate_scene", "render_scan", "make_benchmark",
    "save_benchmark", "oracle_radon", "oracle_corr1d", "oracle_corr2d", "sample_wall", "make_rng",
]
