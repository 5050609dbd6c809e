"""Built-in invariant suite run by ``ringloc selfcheck``.

Each property builds its own small seeded fixture and returns a short detail
string; a property fails by raising ``AssertionError`` (or any other error).
Library functions are looked up through their modules at call time, so a
patched implementation is what gets checked.
"""

from __future__ import annotations

import math
import time
import traceback
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import evaluation, features, localization, synthetic, transforms
from .config import PipelineConfig
from .features import FeatureBEV, GridConfig
from .poses import Pose3
from .scan_io import PointCloud


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str
    seconds: float


_REGISTRY: list[tuple[str, Callable[[], str]]] = []


def _prop(name: str):
    def deco(fn):
        _REGISTRY.append((name, fn))
        return fn
    return deco


def property_names() -> list[str]:
    return [n for n, _ in _REGISTRY]


def _rng(seed: int = 7) -> np.random.Generator:
    return synthetic.make_rng(seed)


def _random_bev(rng, size=32, channels=2, fill=0.2) -> FeatureBEV:
    grid = rng.random((size, size, channels)) * (rng.random((size, size, 1)) < fill)
    return FeatureBEV(grid, GridConfig(size=size, extent=size / 2.0))


def _scene_cloud(seed: int = 3) -> PointCloud:
    """A small asymmetric scene in the sensor frame, a few thousand points."""
    rng = _rng(seed)
    parts = [
        synthetic.sample_wall(rng, (4.0, 3.0), (25.0, 3.0), 6.0, 2.0),
        synthetic.sample_wall(rng, (4.0, 3.0), (4.0, 18.0), 6.0, 2.0),
        synthetic.sample_wall(rng, (-20.0, -12.0), (-5.0, -25.0), 4.0, 2.0),
        synthetic.sample_box(rng, (-15.0, 10.0), (5.0, 3.0), 3.0, 0.4, 2.0),
        synthetic.sample_post(rng, (12.0, -15.0), 0.4, 5.0, 3.0),
        synthetic.sample_post(rng, (-3.0, 22.0), 0.3, 4.0, 3.0),
    ]
    return PointCloud(np.vstack(parts))


@_prop("radon_mass_conservation")
def _radon_mass() -> str:
    bev = _random_bev(_rng(1))
    sg = transforms.radon(bev)
    total = bev.grid.sum(axis=(0, 1))
    err = float(np.max(np.abs(sg.data.sum(axis=1) - total[None, :])))
    assert err < 1e-9 * max(1.0, float(total.max())), f"row sums differ from mass by {err:.3g}"
    return f"max row-sum error {err:.2e}"


@_prop("sinogram_rotation_shift")
def _sinogram_shift() -> str:
    cfg = GridConfig(size=120)
    bev = features.occupancy_bev(_scene_cloud(), cfg)
    k = 17
    rotated = transforms.rotate_bev(bev, 2 * math.pi * k / cfg.size)
    a = transforms.radon(rotated).data
    b = transforms.radon(bev).data
    got = transforms.argmax_lowest(transforms.circular_corr(a, b))
    err = abs(transforms.wrap_shift((got - k) % cfg.size, cfg.size))
    assert err <= 1, f"sinogram peak at {got}, expected {k}"
    return f"peak {got} for shift {k}"


@_prop("ting_half_turn_symmetry")
def _ting_pi() -> str:
    t = transforms.ting(transforms.radon(_random_bev(_rng(2)))).data
    n = t.shape[0]
    err = float(np.max(np.abs(t - np.roll(t, n // 2, axis=0))))
    assert err < 1e-9 * max(1.0, float(t.max())), f"rows k and k+N/2 differ by {err:.3g}"
    return f"max difference {err:.2e}"


@_prop("ting_translation_invariance")
def _ting_translation() -> str:
    # a planar translation moves each sinogram row cyclically along tau by its
    # own amount; the row spectra magnitudes must not notice
    sg = transforms.radon(_random_bev(_rng(3))).data
    shifts = _rng(4).integers(0, sg.shape[1], sg.shape[0])
    moved = np.stack([np.roll(row, s, axis=0) for row, s in zip(sg, shifts)])
    t1, t2 = transforms.ting(sg).data, transforms.ting(moved).data
    rel = float(np.linalg.norm(t1 - t2) / np.linalg.norm(t1))
    assert rel < 1e-12, f"relative TING change {rel:.3g} under row shifts"
    return f"relative change {rel:.1e}"


@_prop("normalization_zero_mean_unit_norm")
def _normalization() -> str:
    n = transforms.normalize_ting(_rng(4).random((12, 7, 3)) * 5.0 + 2.0).data
    mean, norm = float(n.mean()), float(np.linalg.norm(n))
    assert abs(mean) < 1e-12 and abs(norm - 1.0) < 1e-12, f"mean {mean:.3g}, norm {norm:.15f}"
    return f"mean {mean:.1e}, norm-1 {norm - 1:.1e}"


@_prop("circular_corr_shift_convention")
def _corr1d_convention() -> str:
    b = _rng(5).random((24, 7, 2))
    a = np.roll(b, 5, axis=0)
    got = transforms.argmax_lowest(transforms.circular_corr(a, b))
    assert got == 5, f"peak at {got}, expected 5"
    return "roll(b, 5) == a peaks at 5"


@_prop("circular_corr_matches_oracle")
def _corr1d_oracle() -> str:
    rng = _rng(6)
    a, b = rng.standard_normal((16, 9, 3)), rng.standard_normal((16, 9, 3))
    fast, slow = transforms.circular_corr(a, b), synthetic.oracle_corr1d(a, b)
    err = float(np.max(np.abs(fast - slow)) / np.max(np.abs(slow)))
    assert err < 1e-9, f"relative error {err:.3g}"
    return f"relative error {err:.1e}"


@_prop("corr2d_shift_convention")
def _corr2d_convention() -> str:
    a = _rng(8).random((20, 20, 2))
    b = np.roll(a, (3, -5), axis=(0, 1))
    c = transforms.corr2d(a, b)
    kx, ky = divmod(transforms.argmax_lowest(c), c.shape[1])
    got = (transforms.wrap_shift(kx, 20), transforms.wrap_shift(ky, 20))
    assert got == (3, -5), f"peak at {got}, expected (3, -5)"
    return "roll(a, (3, -5)) peaks at (3, -5)"


@_prop("corr2d_matches_oracle")
def _corr2d_oracle() -> str:
    rng = _rng(9)
    a, b = rng.standard_normal((12, 12, 2)), rng.standard_normal((12, 12, 2))
    fast, slow = transforms.corr2d(a, b), synthetic.oracle_corr2d(a, b)
    err = float(np.max(np.abs(fast - slow)) / np.max(np.abs(slow)))
    assert err < 1e-9, f"relative error {err:.3g}"
    return f"relative error {err:.1e}"


@_prop("radon_matches_oracle")
def _radon_oracle() -> str:
    bev = _random_bev(_rng(10), size=16)
    fast, slow = transforms.radon(bev).data, synthetic.oracle_radon(bev).data
    err = float(np.max(np.abs(fast - slow)) / np.max(np.abs(slow)))
    assert err < 1e-9, f"relative error {err:.3g}"
    return f"relative error {err:.1e}"


@_prop("argmax_equals_exact_retrieval")
def _appendix_a() -> str:
    rng = _rng(11)
    entries = [transforms.normalize_ting(rng.random((16, 9, 2))) for _ in range(2)]
    cfg = PipelineConfig(grid=GridConfig(size=16, extent=8.0))
    index = localization.MapIndex(
        [localization.MapEntry(i, Pose3(), e, FeatureBEV(np.zeros((16, 16, 2)), cfg.grid))
         for i, e in enumerate(entries)], cfg)
    query = transforms.normalize_ting(np.roll(entries[1].data, 3, axis=0) + 0.05 * rng.random((16, 9, 2)))
    fast = localization.recognize(query, index, 1)[0].map_id
    exact = localization.recognize(query, index, 1, exact_mode=True)[0].map_id
    assert fast == exact == 1, f"argmax picked {fast}, exact picked {exact}, expected 1"
    return "both modes pick entry 1"


@_prop("rotation_estimate_from_shift")
def _rotation_estimate() -> str:
    q = transforms.normalize_ting(_rng(12).random((120, 61, 2)))
    m = transforms.NormalizedTING(np.roll(q.data, 10, axis=0))
    est = localization.estimate_rotation(q, m)
    err = abs(math.degrees(est.hypotheses[0]) - 30.0)
    assert err <= 3.0 + 1e-9, f"primary hypothesis {math.degrees(est.hypotheses[0]):.2f} deg, expected 30"
    return f"primary {math.degrees(est.hypotheses[0]):.1f} deg"


@_prop("translation_estimate_from_shift")
def _translation_estimate() -> str:
    cfg = GridConfig(size=120)
    q = transforms.normalize_bev(features.occupancy_bev(_scene_cloud(), cfg))
    m = FeatureBEV(np.roll(q.grid, (4, -2), axis=(0, 1)), cfg)
    est = localization.estimate_translation(q, m, (0.0, math.pi))
    want = np.array([4, -2]) * cfg.resolution
    err = np.abs(np.array([est.dx, est.dy]) - want)
    assert np.all(err <= 0.5 * cfg.resolution) and est.chosen_rotation == 0.0, \
        f"got ({est.dx:.2f}, {est.dy:.2f}) rot {est.chosen_rotation:.2f}, expected {tuple(want.round(2))} rot 0"
    return f"d = ({est.dx:.2f}, {est.dy:.2f}) m"


@_prop("table1_features_yaw_invariant")
def _feature_invariance() -> str:
    cloud = _scene_cloud()
    stats = features.neighborhood_stats(cloud, features.knn_indices(cloud, 30))
    f1 = features.point_features(stats)
    rotated = Pose3.from_xyz_yaw(0.0, 0.0, 0.0, 1.1).apply(cloud.xyz)
    stats2 = features.neighborhood_stats(rotated, features.knn_indices(rotated, 30))
    err = float(np.max(np.abs(features.point_features(stats2) - f1)))
    assert err < 1e-6, f"max feature change {err:.3g}"
    return f"max change {err:.1e}"


@_prop("metrics_confusion_fixture")
def _metrics() -> str:
    gt = evaluation.GtAssociation({i: frozenset({i}) for i in range(8)} | {8: frozenset(), 9: frozenset()})
    outs = [evaluation.QueryOutcome(i, i, 0.9) for i in range(6)]
    outs += [evaluation.QueryOutcome(6, 0, 0.2), evaluation.QueryOutcome(7, 0, 0.2)]
    outs += [evaluation.QueryOutcome(8, 0, 0.9), evaluation.QueryOutcome(9, 0, 0.9)]
    rep = evaluation.compute_metrics(outs, gt, [0.5])
    _, p, r = rep.pr_curve[0]
    f1 = rep.f1_curve[0][1]
    assert (p, r, f1) == (0.75, 0.75, 0.75), f"precision {p}, recall {r}, F1 {f1}"
    return "P = R = F1 = 0.75"


@_prop("ate_gauge_invariance")
def _ate_gauge() -> str:
    rng = _rng(13)
    gt = [Pose3.from_xyz_yaw(*rng.uniform(-20, 20, 3), rng.uniform(0, 6)) for _ in range(8)]
    est = [Pose3.from_xyz_yaw(*(p.translation + rng.normal(0, 0.3, 3)), p.yaw) for p in gt]
    g = Pose3.from_xyz_yaw(5.0, -3.0, 1.0, 0.7)
    a = evaluation.ate(est, gt).ate_mean
    b = evaluation.ate([g @ p for p in est], [g @ p for p in gt]).ate_mean
    assert abs(a - b) < 1e-9, f"ATE changed by {abs(a - b):.3g}"
    return f"ATE {a:.4f}, change {abs(a - b):.1e}"


@_prop("pose_composition_roundtrip")
def _pose_roundtrip() -> str:
    rng = _rng(14)
    p = Pose3(rng.normal(size=3), rng.normal(size=4))
    q = Pose3(rng.normal(size=3), rng.normal(size=4))
    err = float(np.max(np.abs(((p @ q) @ q.inverse()).matrix() - p.matrix())))
    assert err < 1e-12, f"composition error {err:.3g}"
    return f"error {err:.1e}"


def run_selfcheck(names=None) -> list[PropertyResult]:
    results = []
    for name, fn in _REGISTRY:
        if names is not None and name not in names:
            continue
        t0 = time.perf_counter()
        try:
            detail, ok = fn(), True
        except AssertionError as exc:
            detail, ok = str(exc) or "assertion failed", False
        except Exception as exc:  # a crash is a failure of that property, not of the suite
            detail, ok = f"{type(exc).__name__}: {exc}", False
            traceback.print_exc()
        results.append(PropertyResult(name, ok, detail, time.perf_counter() - t0))
    return results
