"""Radon sinogram, translation-invariant spectrum (TING), normalization and
FFT-based correlations.

Conventions
-----------
* Sinogram rows are ``theta_j = 2*pi*j / n_theta`` over the full circle and
  columns are ``tau_k = (k - n_tau/2) * dtau`` with ``dtau = 2*sqrt(2)*extent / n_tau``,
  so a line ``x*cos(theta) + y*sin(theta) = tau`` through the grid center
  lands on column ``n_tau/2`` and corner cells are never clipped.
* Rotating the scene counter-clockwise by ``k`` angular bins rolls the
  sinogram rows forward: ``sg_rot[j] == sg[j - k]``.
* ``circular_corr(a, b)[k] = sum_j <a[j + k], b[j]>``: the peak sits at the
  ``k`` for which ``np.roll(b, k, axis=0)`` matches ``a``.
* ``corr2d(a, b)[k] = sum_p <a[p], b[p + k]>``: the peak sits at the ``k`` for
  which ``np.roll(a, k, axis=(0, 1))`` matches ``b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import ndimage

from .errors import DegenerateConstantInput, NonSquareInput, ShapeMismatch
from .features import FeatureBEV, GridConfig

ArrayLike = Union[np.ndarray, "Sinogram", "TING", "NormalizedTING", FeatureBEV]


@dataclass(frozen=True, eq=False)
class Sinogram:
    data: np.ndarray  # (n_theta, n_tau, C)
    theta: np.ndarray
    tau: np.ndarray


@dataclass(frozen=True, eq=False)
class TING:
    data: np.ndarray  # (n_theta, n_omega, C), nonnegative


@dataclass(frozen=True, eq=False)
class NormalizedTING:
    data: np.ndarray  # zero mean, unit Frobenius norm


def _arr(x: ArrayLike) -> np.ndarray:
    if isinstance(x, FeatureBEV):
        return x.grid
    data = getattr(x, "data", None)
    if isinstance(data, np.ndarray):
        return data
    return np.asarray(x, dtype=float)


def _as3d(a: np.ndarray) -> np.ndarray:
    return a[:, :, None] if a.ndim == 2 else a


def theta_axis(n_theta: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n_theta) / n_theta


def tau_axis(n_tau: int, extent: float) -> np.ndarray:
    dtau = 2.0 * math.sqrt(2.0) * extent / n_tau
    return (np.arange(n_tau) - n_tau // 2) * dtau


def cell_centers(cfg: GridConfig) -> np.ndarray:
    return -cfg.extent + (np.arange(cfg.size) + 0.5) * cfg.resolution


def radon(bev: FeatureBEV, n_theta: int | None = None, n_tau: int | None = None) -> Sinogram:
    """Discrete Radon transform of every BEV channel.

    Each row is the BEV rotated so that the integration lines align with a
    grid axis, then summed along that axis. The rotation pushes each cell's
    mass onto its neighbours with bilinear weights; summing those weights
    across the integration axis leaves linear weights along tau, so every
    cell contributes its mass to the two tau bins around its projection
    ``x*cos(theta) + y*sin(theta)``. Row sums equal the total mass.
    """
    grid = _as3d(bev.grid)
    h, w, n_ch = grid.shape
    if h != w:
        raise NonSquareInput(f"radon needs a square grid, got {h}x{w}")
    cfg = bev.config
    n_theta = cfg.size if n_theta is None else int(n_theta)
    n_tau = cfg.size if n_tau is None else int(n_tau)
    theta = theta_axis(n_theta)
    tau = tau_axis(n_tau, cfg.extent)
    dtau = tau[1] - tau[0]

    occupied = np.any(grid != 0.0, axis=2)
    ix, iy = np.nonzero(occupied)
    out = np.zeros((n_theta, n_tau, n_ch))
    if ix.size == 0:
        return Sinogram(out, theta, tau)
    centers = cell_centers(cfg)
    x, y = centers[ix], centers[iy]
    mass = grid[ix, iy, :]

    proj = np.cos(theta)[:, None] * x[None, :] + np.sin(theta)[:, None] * y[None, :]
    u = proj / dtau + n_tau // 2
    k0 = np.floor(u)
    frac = u - k0
    k0 = k0.astype(np.int64) % n_tau
    k1 = (k0 + 1) % n_tau
    row = (np.arange(n_theta) * n_tau)[:, None]
    flat0 = (row + k0).ravel()
    flat1 = (row + k1).ravel()
    w0 = (1.0 - frac).ravel()
    w1 = frac.ravel()
    size = n_theta * n_tau
    for c in range(n_ch):
        m = np.broadcast_to(mass[:, c], proj.shape).ravel()
        out[:, :, c] = (np.bincount(flat0, w0 * m, size) + np.bincount(flat1, w1 * m, size)).reshape(
            n_theta, n_tau)
    return Sinogram(out, theta, tau)


def ting(sg: Sinogram | np.ndarray) -> TING:
    """Magnitude of the one-sided DFT of every sinogram row (DC included)."""
    data = _as3d(_arr(sg))
    return TING(np.abs(np.fft.rfft(data, axis=1)))


def _zero_mean_unit_norm(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    centered = a - a.mean()
    norm = np.linalg.norm(centered)
    scale = max(float(np.max(np.abs(a))), 1e-300)
    if norm <= 1e-12 * scale * math.sqrt(a.size) or norm == 0.0:
        raise DegenerateConstantInput("cannot normalize an array with zero variance")
    return centered / norm


def normalize_ting(t: TING | np.ndarray) -> NormalizedTING:
    """Subtract the global mean and divide by the Frobenius norm (all channels jointly)."""
    return NormalizedTING(_zero_mean_unit_norm(_as3d(_arr(t))))


def normalize_bev(bev: FeatureBEV) -> FeatureBEV:
    """Same zero-mean / unit-Frobenius scheme applied to a BEV grid."""
    return FeatureBEV(_zero_mean_unit_norm(bev.grid), bev.config)


def circular_corr(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """Channel-summed circular cross-correlation along the angle axis.

    Computed in the Fourier domain along axis 0, summed over the remaining
    axes; returns a length ``n_theta`` array.
    """
    A, B = _arr(a), _arr(b)
    if A.shape != B.shape:
        raise ShapeMismatch(f"{A.shape} vs {B.shape}")
    n = A.shape[0]
    spec = np.fft.rfft(A, axis=0) * np.conj(np.fft.rfft(B, axis=0))
    spec = spec.reshape(spec.shape[0], -1).sum(axis=1)
    return np.fft.irfft(spec, n=n)


def angle_spectra(stack: np.ndarray) -> np.ndarray:
    """Conjugated angle-axis spectra of stacked TINGs ``(M, n_theta, ...)``.

    Precomputing these lets :func:`circular_corr_batch` correlate a query
    against many entries with one inverse FFT each.
    """
    return np.conj(np.fft.rfft(np.asarray(stack, dtype=float), axis=1))


def circular_corr_batch(a: ArrayLike, spectra: np.ndarray) -> np.ndarray:
    """``circular_corr(a, b_m)`` for every ``b_m`` whose spectra were precomputed.

    Returns ``(M, n_theta)``; rows are identical to the sequential results up
    to floating-point summation order.
    """
    A = _arr(a)
    n = A.shape[0]
    if spectra.shape[1:] != (n // 2 + 1,) + A.shape[1:]:
        raise ShapeMismatch(f"query {A.shape} vs stored spectra {spectra.shape}")
    fa = np.fft.rfft(A, axis=0)
    prod = (spectra * fa[None]).reshape(spectra.shape[0], spectra.shape[1], -1).sum(axis=2)
    return np.fft.irfft(prod, n=n, axis=1)


def corr2d(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """Channel-summed circular 2D cross-correlation of two grids via 2D FFT."""
    A, B = _as3d(_arr(a)), _as3d(_arr(b))
    if A.shape != B.shape:
        raise ShapeMismatch(f"{A.shape} vs {B.shape}")
    h, w = A.shape[:2]
    spec = np.conj(np.fft.rfft2(A, axes=(0, 1))) * np.fft.rfft2(B, axes=(0, 1))
    return np.fft.irfft2(spec.sum(axis=2), s=(h, w))


def wrap_shift(k: int, n: int) -> int:
    """Map a circular shift index to a signed shift (``k > n/2`` becomes negative)."""
    k = int(k) % n
    return k - n if k > n // 2 else k


def argmax_lowest(values: np.ndarray, rtol: float = 1e-9) -> int:
    """Flat index of the maximum; near-ties within ``rtol`` go to the lowest index."""
    v = np.asarray(values).ravel()
    top = v.max()
    tol = rtol * max(abs(top), 1e-300)
    return int(np.flatnonzero(v >= top - tol)[0])


def rotate_bev(bev: FeatureBEV, angle: float) -> FeatureBEV:
    """Rotate the grid content counter-clockwise about its center.

    Bilinear resampling with zeros outside the grid.
    """
    grid = _as3d(bev.grid)
    h, w, n_ch = grid.shape
    if h != w:
        raise NonSquareInput(f"rotate_bev needs a square grid, got {h}x{w}")
    c = (h - 1) / 2.0
    ii, jj = np.meshgrid(np.arange(h, dtype=float) - c, np.arange(w, dtype=float) - c, indexing="ij")
    ca, sa = math.cos(angle), math.sin(angle)
    # out(p) = in(R(-angle) p)
    src_i = ca * ii + sa * jj + c
    src_j = -sa * ii + ca * jj + c
    coords = np.stack([src_i, src_j])
    out = np.empty_like(grid)
    for ch in range(n_ch):
        out[:, :, ch] = ndimage.map_coordinates(grid[:, :, ch], coords, order=1, mode="constant",
                                                cval=0.0, prefilter=False)
    return FeatureBEV(out, bev.config)


def sinogram_shift_property_check(bev: FeatureBEV, alpha_bin: int, n_theta: int | None = None) -> float:
    """Largest deviation from exact row-shift equivariance.

    Rotates ``bev`` by ``alpha_bin`` angular bins and compares its sinogram
    with the original sinogram rolled forward by ``alpha_bin`` rows, over
    tau bins inside the grid's inscribed circle.
    """
    n_theta = bev.config.size if n_theta is None else int(n_theta)
    angle = 2.0 * math.pi * alpha_bin / n_theta
    sg = radon(bev, n_theta=n_theta)
    sg_rot = radon(rotate_bev(bev, angle), n_theta=n_theta)
    interior = np.abs(sg.tau) < bev.config.extent
    diff = sg_rot.data - np.roll(sg.data, alpha_bin, axis=0)
    return float(np.max(np.abs(diff[:, interior, :])))


def ting_pipeline(bev: FeatureBEV) -> NormalizedTING:
    """BEV -> sinogram -> TING -> normalized TING."""
    return normalize_ting(ting(radon(bev)))


__all__ = [
    "Sinogram", "TING", "NormalizedTING", "radon", "ting", "normalize_ting", "normalize_bev",
    "circular_corr", "circular_corr_batch", "angle_spectra", "corr2d", "rotate_bev",
    "sinogram_shift_property_check", "wrap_shift", "argmax_lowest", "ting_pipeline",
    "theta_axis", "tau_axis", "cell_centers",
]
