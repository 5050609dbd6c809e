"""Map indexing, place recognition and global 3-DoF pose estimation.

Frames: ``T_n`` maps map-scan sensor coordinates to the world and ``T_nQ``
maps query sensor coordinates into the map scan's frame, so the query pose is
``T_n @ T_nQ``. The map BEV is then the query BEV rotated by the yaw of
``T_nQ`` and shifted by its translation.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import PipelineConfig
from .errors import EmptyIndex, RinglocError, ScanError, ShapeMismatch
from .features import FeatureBEV, extract_bev
from .icp import icp_refine
from .poses import TWO_PI, Pose2, Pose3, rot2, wrap_angle
from .scan_io import PointCloud, ScanRecord
from .transforms import (NormalizedTING, angle_spectra, argmax_lowest, circular_corr, circular_corr_batch,
                         corr2d, normalize_bev, normalize_ting, radon, rotate_bev, ting, wrap_shift)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MapEntry:
    id: int
    pose: Pose3
    nting: NormalizedTING
    bev: FeatureBEV  # normalized
    cloud: Optional[PointCloud] = None


@dataclass(eq=False)
class MapIndex:
    entries: list[MapEntry]
    config: PipelineConfig
    _spectra: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.entries:
            raise EmptyIndex("map index needs at least one entry")
        shapes = {e.nting.data.shape for e in self.entries}
        bev_shapes = {e.bev.grid.shape for e in self.entries}
        if len(shapes) != 1 or len(bev_shapes) != 1:
            raise ShapeMismatch("all index entries must share grid shapes")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("map ids must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[int]:
        return [e.id for e in self.entries]

    def entry(self, map_id: int) -> MapEntry:
        for e in self.entries:
            if e.id == map_id:
                return e
        raise KeyError(map_id)

    @property
    def spectra(self) -> np.ndarray:
        if self._spectra is None:
            self._spectra = angle_spectra(np.stack([e.nting.data for e in self.entries]))
        return self._spectra


@dataclass(frozen=True)
class PlaceCandidate:
    map_id: int
    ring_score: float
    k_theta: int
    distance: Optional[float] = None  # only set by exact (Euclidean RING) retrieval


@dataclass(frozen=True)
class RotationEstimate:
    hypotheses: tuple[float, float]
    peak_value: float
    k_theta: int


@dataclass(frozen=True)
class TranslationEstimate:
    dx: float
    dy: float
    peak_value: float
    chosen_rotation: float


@dataclass
class LocalizationResult:
    candidates: list[PlaceCandidate]
    map_id: int
    ring_score: float
    pose3dof: Pose2
    estimate: Pose3
    refined: Optional[Pose3]
    icp_fitness: Optional[float]
    translation_peak: float
    no_match: bool
    timings: dict[str, float]

    def to_dict(self) -> dict:
        def pose3(p: Optional[Pose3]):
            if p is None:
                return None
            return {"translation": [float(v) for v in p.translation],
                    "quaternion": [float(v) for v in p.quaternion]}

        return {
            "candidates": [{"map_id": c.map_id, "ring_score": c.ring_score, "k_theta": c.k_theta}
                           for c in self.candidates],
            "best": {
                "map_id": self.map_id,
                "ring_score": self.ring_score,
                "pose3dof": {"x": self.pose3dof.x, "y": self.pose3dof.y, "yaw": self.pose3dof.yaw},
                "estimate": pose3(self.estimate),
                "refined": pose3(self.refined),
                "icp_fitness": self.icp_fitness,
                "translation_peak": self.translation_peak,
            },
            "no_match": self.no_match,
            "timings": dict(self.timings),
        }


# ---------------------------------------------------------------------------
# representation pass


def represent(cloud: PointCloud, cfg: PipelineConfig) -> tuple[FeatureBEV, NormalizedTING]:
    """Raw feature BEV and normalized TING of a preprocessed cloud."""
    bev = extract_bev(cloud, cfg.grid, cfg.features, cfg.k_neighbors, cfg.entropy_normalized)
    return bev, normalize_ting(ting(radon(bev)))


def _index_entry(scan: ScanRecord, cfg: PipelineConfig, keep_cloud: bool) -> tuple[MapEntry, float]:
    t0 = time.perf_counter()
    try:
        bev, nting = represent(scan.cloud, cfg)
        entry = MapEntry(scan.id, scan.pose, nting, normalize_bev(bev), scan.cloud if keep_cloud else None)
    except RinglocError as exc:
        raise ScanError(scan.id, exc) from exc
    return entry, time.perf_counter() - t0


def build_index(scans: Sequence[ScanRecord], cfg: PipelineConfig = PipelineConfig(), keep_clouds: bool = True,
                jobs: int = 1, timings: Optional[list] = None) -> MapIndex:
    """Run the representation pass over every (preprocessed) map scan.

    Entry order follows ``scans`` regardless of ``jobs``. Per-scan wall
    times are appended to ``timings`` when a list is given.
    """
    if not scans:
        raise EmptyIndex("no scans to index")
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            done = list(pool.map(lambda s: _index_entry(s, cfg, keep_clouds), scans))
    else:
        done = [_index_entry(s, cfg, keep_clouds) for s in scans]
    if timings is not None:
        timings.extend(dt for _, dt in done)
    return MapIndex([e for e, _ in done], cfg)


# ---------------------------------------------------------------------------
# solving pass


def ring_scores(query_nting: NormalizedTING, index: MapIndex) -> tuple[np.ndarray, np.ndarray]:
    """Per-entry correlation peak (RING element) and the shift where it occurs."""
    q = query_nting.data
    if q.shape != index.entries[0].nting.data.shape:
        raise ShapeMismatch(f"query TING {q.shape} vs index {index.entries[0].nting.data.shape}")
    corr = circular_corr_batch(q, index.spectra)
    shifts = np.array([argmax_lowest(row) for row in corr])
    return corr[np.arange(len(shifts)), shifts], shifts


def ring_matrix(index: MapIndex) -> np.ndarray:
    """RING vectors of every map entry against the whole map (row j = entry j)."""
    return np.stack([ring_scores(e.nting, index)[0] for e in index.entries])


def recognize(query_nting: NormalizedTING, index: MapIndex, top_k: int = 1,
              exact_mode: bool = False) -> list[PlaceCandidate]:
    """Rank map entries for a query.

    The default ranks by the normalized correlation peak. ``exact_mode``
    instead builds full RING vectors for the query and every map entry and
    ranks by Euclidean distance between them (quadratic in map size).
    Ties go to the lower map id.
    """
    scores, shifts = ring_scores(query_nting, index)
    ids = np.array(index.ids)
    if exact_mode:
        dist = np.linalg.norm(ring_matrix(index) - scores[None, :], axis=1)
        order = sorted(range(len(ids)), key=lambda i: (dist[i], ids[i]))
        return [PlaceCandidate(int(ids[i]), float(scores[i]), int(shifts[i]), float(dist[i]))
                for i in order[:top_k]]
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [PlaceCandidate(int(ids[i]), float(scores[i]), int(shifts[i])) for i in order[:top_k]]


def estimate_rotation(query_nting: NormalizedTING, map_nting: NormalizedTING) -> RotationEstimate:
    """Yaw of the query in the map frame, up to the half-turn ambiguity.

    Returns the best shift and its half-turn partner, both in ``[0, 2*pi)``.
    """
    corr = circular_corr(map_nting, query_nting)
    n = corr.shape[0]
    k = argmax_lowest(corr)
    alpha = TWO_PI * k / n
    return RotationEstimate((alpha, wrap_angle(alpha + math.pi)), float(corr[k]), k)


def _parabolic_offset(left: float, center: float, right: float) -> float:
    denom = left - 2.0 * center + right
    if denom >= 0.0:
        return 0.0
    off = 0.5 * (left - right) / denom
    return float(np.clip(off, -0.5, 0.5))


def estimate_translation(query_bev: FeatureBEV, map_bev: FeatureBEV, rotation_hypotheses: Sequence[float],
                         subpixel: bool = True) -> TranslationEstimate:
    """Planar translation of the query in the map frame.

    For each yaw hypothesis the map BEV is rotated back by that yaw and
    correlated with the query BEV; the hypothesis with the highest peak wins,
    which also settles the half-turn ambiguity.
    """
    if query_bev.grid.shape != map_bev.grid.shape:
        raise ShapeMismatch(f"{query_bev.grid.shape} vs {map_bev.grid.shape}")
    h, w = query_bev.grid.shape[:2]
    res = query_bev.config.resolution
    best = None
    for alpha in rotation_hypotheses:
        corr = corr2d(query_bev, rotate_bev(map_bev, -alpha))
        flat = argmax_lowest(corr)
        kx, ky = divmod(flat, w)
        peak = float(corr[kx, ky])
        if best is None or peak > best[0]:
            best = (peak, alpha, kx, ky, corr)
    peak, alpha, kx, ky, corr = best
    sx, sy = float(wrap_shift(kx, h)), float(wrap_shift(ky, w))
    if subpixel:
        sx += _parabolic_offset(corr[(kx - 1) % h, ky], corr[kx, ky], corr[(kx + 1) % h, ky])
        sy += _parabolic_offset(corr[kx, (ky - 1) % w], corr[kx, ky], corr[kx, (ky + 1) % w])
    d = rot2(alpha) @ np.array([sx * res, sy * res])
    return TranslationEstimate(float(d[0]), float(d[1]), peak, float(alpha))


def localize(query_cloud: PointCloud, index: MapIndex, cfg: Optional[PipelineConfig] = None,
             top_k: Optional[int] = None, run_icp: Optional[bool] = None) -> LocalizationResult:
    """Full solving pass for one preprocessed query scan."""
    if index is None or len(index) == 0:
        raise EmptyIndex("cannot localize against an empty index")
    cfg = index.config if cfg is None else cfg
    top_k = cfg.top_k if top_k is None else top_k
    run_icp = cfg.run_icp if run_icp is None else run_icp
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    bev = extract_bev(query_cloud, cfg.grid, cfg.features, cfg.k_neighbors, cfg.entropy_normalized)
    t1 = time.perf_counter()
    nting = normalize_ting(ting(radon(bev)))
    nbev = normalize_bev(bev)
    t2 = time.perf_counter()
    candidates = recognize(nting, index, top_k)
    t3 = time.perf_counter()

    solved = []
    for cand in candidates:
        entry = index.entry(cand.map_id)
        rot = estimate_rotation(nting, entry.nting)
        tr = estimate_translation(nbev, entry.bev, rot.hypotheses, cfg.subpixel)
        solved.append((tr.peak_value, cand, tr))
    # stable sort keeps retrieval order on equal peaks
    solved.sort(key=lambda s: -s[0])
    peak, best, tr = solved[0]
    t4 = time.perf_counter()
    timings.update(features=t1 - t0, representation=t2 - t1, retrieval=t3 - t2, solving=t4 - t3)

    entry = index.entry(best.map_id)
    rel = Pose3.from_xyz_yaw(tr.dx, tr.dy, 0.0, tr.chosen_rotation)
    refined, fitness = None, None
    if run_icp and entry.cloud is not None:
        t5 = time.perf_counter()
        icp = icp_refine(query_cloud, entry.cloud, rel, cfg.icp.max_corr_dist, cfg.icp.max_iters,
                         cfg.icp.eps, cfg.icp.voxel_size)
        refined, fitness = entry.pose @ icp.pose, icp.fitness
        timings["refinement"] = time.perf_counter() - t5
    return LocalizationResult(
        candidates=candidates,
        map_id=best.map_id,
        ring_score=best.ring_score,
        pose3dof=Pose2(tr.dx, tr.dy, tr.chosen_rotation),
        estimate=entry.pose @ rel,
        refined=refined,
        icp_fitness=fitness,
        translation_peak=peak,
        no_match=best.ring_score < cfg.accept_threshold,
        timings=timings,
    )
