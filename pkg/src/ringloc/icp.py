"""Point-to-point ICP used to refine the global 3-DoF estimate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, NoCorrespondences
from .poses import Pose3
from .scan_io import PointCloud


@dataclass(frozen=True)
class IcpResult:
    pose: Pose3
    fitness: float
    inlier_rmse: float
    iterations_used: int
    converged: bool


def voxel_downsample(xyz: np.ndarray, voxel: float) -> np.ndarray:
    """Centroid of the points in each occupied voxel, in voxel-key order."""
    if voxel <= 0 or xyz.shape[0] == 0:
        return xyz
    keys = np.floor(xyz / voxel).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    sums = np.zeros((counts.size, 3))
    np.add.at(sums, inv, xyz)
    return sums / counts[:, None]


def kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation and translation with ``R @ src + t ~= dst``."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    return R, cd - R @ cs


def icp_refine(source: PointCloud, target: PointCloud, init: Pose3 = Pose3(), max_corr_dist: float = 1.5,
               max_iters: int = 100, eps: float = 1e-6, voxel_size: float = 0.0) -> IcpResult:
    """Align ``source`` onto ``target`` starting from ``init``.

    Stops when the incremental update (rotation angle in radians plus
    translation norm in meters) drops below ``eps``. ``fitness`` is the
    fraction of source points with a target neighbour within
    ``max_corr_dist`` at the final pose.

    Raises
    ------
    NoCorrespondences
        No source point has a target neighbour within ``max_corr_dist``.
    """
    if len(source) == 0 or len(target) == 0:
        raise EmptyCloud("icp needs two nonempty clouds")
    src = voxel_downsample(source.xyz, voxel_size)
    dst = voxel_downsample(target.xyz, voxel_size)
    tree = cKDTree(dst)
    R, t = init.rotation, init.translation.copy()
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        moved = src @ R.T + t
        dist, idx = tree.query(moved, distance_upper_bound=max_corr_dist)
        ok = np.isfinite(dist)
        if np.count_nonzero(ok) < 3:
            raise NoCorrespondences(f"only {np.count_nonzero(ok)} pairs within {max_corr_dist} m")
        dR, dt = kabsch(moved[ok], dst[idx[ok]])
        R, t = dR @ R, dR @ t + dt
        angle = np.arccos(np.clip((np.trace(dR) - 1.0) / 2.0, -1.0, 1.0))
        if angle + np.linalg.norm(dt) < eps:
            converged = True
            break
    moved = src @ R.T + t
    dist, _ = tree.query(moved, distance_upper_bound=max_corr_dist)
    ok = np.isfinite(dist)
    fitness = float(np.count_nonzero(ok)) / src.shape[0]
    rmse = float(np.sqrt(np.mean(dist[ok] ** 2))) if np.any(ok) else float("inf")
    return IcpResult(Pose3.from_rt(R, t), fitness, rmse, it, converged)
