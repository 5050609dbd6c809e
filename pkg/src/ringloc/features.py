"""Per-point eigen/height features and bird's-eye-view rasterization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.spatial import cKDTree

from .errors import TooFewPoints
from .scan_io import PointCloud

FEATURE_NAMES = (
    "change_of_curvature",
    "omni_variance",
    "eigen_entropy",
    "linearity_2d",
    "max_height_diff",
    "height_variance",
)


@dataclass(frozen=True)
class GridConfig:
    """Square BEV grid centered on the sensor.

    ``extent`` is the half-width in meters, so one cell spans
    ``2 * extent / size`` meters. ``z_bins`` slices ``[z_min, z_max)`` for
    occupancy voxelization.
    """

    size: int = 120
    extent: float = 70.0
    z_bins: int = 20
    z_min: float = -2.0
    z_max: float = 8.0

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 8 or self.size % 2:
            raise ValueError(f"grid size must be an even integer >= 8, got {self.size}")
        if not self.extent > 0:
            raise ValueError("extent must be positive")
        if self.z_bins < 1 or not self.z_max > self.z_min:
            raise ValueError("need z_bins >= 1 and z_max > z_min")
        object.__setattr__(self, "size", int(self.size))

    @property
    def resolution(self) -> float:
        return 2.0 * self.extent / self.size

    def cell_index(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Integer cell coordinates and an in-grid mask for planar points."""
        # multiply by size / (2 * extent) rather than divide by the resolution,
        # which is inexact and puts the origin in cell size/2 - 1
        scale = self.size / (2.0 * self.extent)
        ij = np.floor((np.asarray(xy)[:, :2] + self.extent) * scale).astype(np.int64)
        inside = np.all((ij >= 0) & (ij < self.size), axis=1)
        return ij, inside


@dataclass(frozen=True, eq=False)
class FeatureBEV:
    """``grid[ix, iy, c]``: axis 0 follows +x, axis 1 follows +y."""

    grid: np.ndarray
    config: GridConfig

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim == 2:
            g = g[:, :, None]
        if g.ndim != 3:
            raise ValueError("BEV grid must be H x W x C")
        if not np.all(np.isfinite(g)):
            raise ValueError("BEV grid must be finite")
        object.__setattr__(self, "grid", g)

    @property
    def channels(self) -> int:
        return self.grid.shape[2]


@dataclass(frozen=True, eq=False)
class NeighborhoodStats:
    """Neighborhood statistics for one or many points (leading axes match)."""

    lambda3d: np.ndarray  # (..., 3) descending
    lambda2d: np.ndarray  # (..., 2) descending
    z_max: np.ndarray
    z_min: np.ndarray
    z_var: np.ndarray

    def __len__(self) -> int:
        return self.lambda3d.shape[0]

    def __getitem__(self, i) -> NeighborhoodStats:
        return NeighborhoodStats(self.lambda3d[i], self.lambda2d[i], self.z_max[i],
                                 self.z_min[i], self.z_var[i])


def knn_indices(cloud: Union[PointCloud, np.ndarray], k: int = 30) -> np.ndarray:
    """Exact k nearest neighbors of every point, the point itself included.

    Returns an ``(N, k)`` integer array ordered by increasing distance.
    """
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    n = xyz.shape[0]
    if k < 1:
        raise ValueError("k must be positive")
    if n < k:
        raise TooFewPoints(f"need at least {k} points, cloud has {n}")
    tree = cKDTree(xyz)
    _, idx = tree.query(xyz, k=k)
    return np.asarray(idx, dtype=np.int64).reshape(n, k)


_EIG_FLOOR = 64 * np.finfo(float).eps


def _sorted_eigvals(cov: np.ndarray) -> np.ndarray:
    """Descending eigenvalues; values at round-off level of the largest are set to 0.

    Without the floor a perfectly planar neighbourhood gets a smallest
    eigenvalue of ~1e-16 whose cube root (omnivariance) is ~1e-5 and varies
    with the cloud's orientation.
    """
    w = np.linalg.eigvalsh(cov)[..., ::-1]
    floor = _EIG_FLOOR * w[..., :1]
    return np.where(w > floor, w, 0.0)


def neighborhood_stats(cloud: Union[PointCloud, np.ndarray], neighbors: np.ndarray) -> NeighborhoodStats:
    """Covariance eigenvalues (1/k normalization) and height statistics."""
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    nb = xyz[np.asarray(neighbors)]
    if nb.ndim != 3:
        raise ValueError("neighbors must be an (N, k) index array")
    k = nb.shape[1]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov3 = np.einsum("nki,nkj->nij", centered, centered) / k
    cov2 = cov3[:, :2, :2]
    z = nb[:, :, 2]
    return NeighborhoodStats(
        lambda3d=_sorted_eigvals(cov3),
        lambda2d=_sorted_eigvals(cov2),
        z_max=z.max(axis=1),
        z_min=z.min(axis=1),
        z_var=np.mean(centered[:, :, 2] ** 2, axis=1),
    )


def point_features(stats: NeighborhoodStats, entropy_normalized: bool = True) -> np.ndarray:
    """The six local features, last axis ordered as ``FEATURE_NAMES``.

    Degenerate ratios (zero eigenvalue sum, zero leading 2D eigenvalue) give 0.
    With ``entropy_normalized=False`` the entropy uses raw eigenvalues,
    ``-sum(l * ln l)``, which depends on metric scale.
    """
    lam = np.asarray(stats.lambda3d, dtype=float)
    lam2 = np.asarray(stats.lambda2d, dtype=float)
    total = lam.sum(axis=-1)
    ok = total > 0
    safe = np.where(ok, total, 1.0)
    c1 = np.where(ok, lam[..., 2] / safe, 0.0)
    c2 = np.where(ok, np.cbrt(np.prod(lam, axis=-1)) / safe, 0.0)
    e = lam / safe[..., None] if entropy_normalized else lam
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(e > 0, e * np.log(np.where(e > 0, e, 1.0)), 0.0)
    c3 = np.where(ok, -terms.sum(axis=-1), 0.0)
    ok2 = lam2[..., 0] > 0
    c4 = np.where(ok2, lam2[..., 1] / np.where(ok2, lam2[..., 0], 1.0), 0.0)
    c5 = np.asarray(stats.z_max) - np.asarray(stats.z_min)
    c6 = np.asarray(stats.z_var, dtype=float)
    return np.stack(np.broadcast_arrays(c1, c2, c3, c4, c5, c6), axis=-1)


def rasterize_bev(cloud: Union[PointCloud, np.ndarray], feats: np.ndarray,
                  cfg: GridConfig = GridConfig()) -> FeatureBEV:
    """Channel-wise max pooling of per-point features into grid cells."""
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    feats = np.asarray(feats, dtype=float)
    if feats.ndim == 1:
        feats = feats[:, None]
    if feats.shape[0] != xyz.shape[0]:
        raise ValueError("features must align with cloud points")
    n_ch = feats.shape[1]
    ij, inside = cfg.cell_index(xyz)
    flat = ij[inside, 0] * cfg.size + ij[inside, 1]
    acc = np.full((cfg.size * cfg.size, n_ch), -np.inf)
    np.maximum.at(acc, flat, feats[inside])
    acc[np.isneginf(acc)] = 0.0
    return FeatureBEV(acc.reshape(cfg.size, cfg.size, n_ch), cfg)


def occupancy_bev(cloud: Union[PointCloud, np.ndarray], cfg: GridConfig = GridConfig()) -> FeatureBEV:
    """Count of occupied height bins per column."""
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    ij, inside = cfg.cell_index(xyz)
    dz = (cfg.z_max - cfg.z_min) / cfg.z_bins
    iz = np.floor((xyz[:, 2] - cfg.z_min) / dz).astype(np.int64)
    ok = inside & (iz >= 0) & (iz < cfg.z_bins)
    vox = (ij[ok, 0] * cfg.size + ij[ok, 1]) * cfg.z_bins + iz[ok]
    cols = np.unique(vox) // cfg.z_bins
    counts = np.bincount(cols, minlength=cfg.size * cfg.size).astype(float)
    return FeatureBEV(counts.reshape(cfg.size, cfg.size, 1), cfg)


def table1_features(cloud: PointCloud, k: int = 30, entropy_normalized: bool = True) -> np.ndarray:
    return point_features(neighborhood_stats(cloud, knn_indices(cloud, k)), entropy_normalized)


def extract_bev(cloud: PointCloud, grid: GridConfig = GridConfig(), mode: str = "table1_six",
                k: int = 30, entropy_normalized: bool = True) -> FeatureBEV:
    """Feature extractor: occupancy (1 channel) or the six local features."""
    if mode == "occupancy":
        return occupancy_bev(cloud, grid)
    if mode == "table1_six":
        return rasterize_bev(cloud, table1_features(cloud, k, entropy_normalized), grid)
    raise ValueError(f"unknown feature mode {mode!r}")


__all__ = [
    "FEATURE_NAMES", "GridConfig", "FeatureBEV", "NeighborhoodStats", "knn_indices",
    "neighborhood_stats", "point_features", "rasterize_bev", "occupancy_bev",
    "table1_features", "extract_bev",
]
