"""Ground-truth association and place-recognition / localization metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import EmptyOutcomes, LengthMismatch
from .icp import kabsch
from .poses import Pose3

SUCCESS_TE = 2.0
SUCCESS_RE = 5.0
QUANTILE_LEVELS = (50, 75, 95)

PoseSet = Union[Mapping[int, Pose3], Sequence[tuple[int, Pose3]]]


def _items(poses: PoseSet) -> list[tuple[int, Pose3]]:
    return list(poses.items()) if isinstance(poses, Mapping) else list(poses)


@dataclass(frozen=True)
class GtAssociation:
    positives: dict[int, frozenset]
    revisit_threshold: float = 10.0

    def is_positive(self, query_id: int) -> bool:
        return bool(self.positives.get(query_id))

    @property
    def n_positive(self) -> int:
        return sum(1 for v in self.positives.values() if v)


def associate(query_poses: PoseSet, map_poses: PoseSet, revisit_threshold: float = 10.0) -> GtAssociation:
    """Map ids whose planar position is within ``revisit_threshold`` (inclusive) of each query."""
    if revisit_threshold <= 0:
        raise ValueError("revisit_threshold must be positive")
    q = _items(query_poses)
    m = _items(map_poses)
    if not q or not m:
        raise ValueError("pose sets must be nonempty")
    mids = np.array([i for i, _ in m])
    mxy = np.array([p.translation[:2] for _, p in m])
    out = {}
    for qid, pose in q:
        d = np.hypot(mxy[:, 0] - pose.translation[0], mxy[:, 1] - pose.translation[1])
        out[qid] = frozenset(int(i) for i in mids[d <= revisit_threshold])
    return GtAssociation(out, revisit_threshold)


def rotation_error(est: float, gt: float) -> float:
    """Absolute yaw difference in degrees, wrapped to ``[0, 180]``."""
    d = math.fmod(abs(est - gt), 2 * math.pi)
    return math.degrees(min(d, 2 * math.pi - d))


@dataclass(frozen=True)
class QueryOutcome:
    query_id: int
    retrieved_id: int
    ring_score: float
    te_2d: float = 0.0
    re_1d: float = 0.0
    te_3d: Optional[float] = None
    re_3d: Optional[float] = None

    @property
    def te(self) -> float:
        return self.te_2d if self.te_3d is None else self.te_3d

    @property
    def re(self) -> float:
        return self.re_1d if self.re_3d is None else self.re_3d

    @property
    def aligned(self) -> bool:
        return self.te < SUCCESS_TE and self.re < SUCCESS_RE


def outcome_from_poses(query_id: int, retrieved_id: int, ring_score: float, map_pose: Pose3, gt_query: Pose3,
                       rel_3dof, refined: Optional[Pose3] = None) -> QueryOutcome:
    """Errors of an estimate against ground truth.

    ``rel_3dof`` is the planar estimate ``(x, y, yaw)`` of the query in the
    retrieved map frame; ``refined`` the absolute query pose after ICP.
    """
    gt_rel = map_pose.inverse() @ gt_query
    te2 = float(math.hypot(rel_3dof[0] - gt_rel.translation[0], rel_3dof[1] - gt_rel.translation[1]))
    re1 = rotation_error(rel_3dof[2], gt_rel.yaw)
    te3 = re3 = None
    if refined is not None:
        err = gt_query.inverse() @ refined
        te3 = float(np.linalg.norm(err.translation))
        re3 = math.degrees(err.angle_to(Pose3()))
    return QueryOutcome(query_id, retrieved_id, ring_score, te2, re1, te3, re3)


@dataclass
class MetricsReport:
    recall_at_1: float
    pr_curve: list[tuple[float, float, float]]
    f1_curve: list[tuple[float, float]]
    auc: float
    te_quantiles: dict[int, float]
    re_quantiles: dict[int, float]
    success_rate: float
    success_rate_among_tp: float
    success_rate_all_top1: float
    operating_threshold: float
    n_queries: int
    n_positives: int
    degenerate_recall: bool = False
    counts: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pr_curve"] = [list(r) for r in self.pr_curve]
        d["f1_curve"] = [list(r) for r in self.f1_curve]
        d["te_quantiles"] = {str(k): v for k, v in self.te_quantiles.items()}
        d["re_quantiles"] = {str(k): v for k, v in self.re_quantiles.items()}
        return d


def parse_thresholds(spec: Union[str, Sequence[float], None]) -> list[float]:
    """``"start:stop:step"`` (inclusive), a comma list, or a sequence of floats."""
    if spec is None:
        return []
    if not isinstance(spec, str):
        return [float(v) for v in spec]
    spec = spec.strip()
    if not spec:
        return []
    if ":" in spec:
        try:
            start, stop, step = (float(p) for p in spec.split(":"))
        except ValueError:
            raise ValueError(f"bad threshold spec {spec!r}") from None
        if step <= 0 or stop < start:
            raise ValueError(f"bad threshold spec {spec!r}")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(n)]
    return [float(p) for p in spec.split(",")]


def _confusion(outcomes: Sequence[QueryOutcome], gt: GtAssociation, threshold: float):
    tp = fp = 0
    tp_items = []
    for o in outcomes:
        if o.ring_score >= threshold:
            if o.retrieved_id in gt.positives.get(o.query_id, ()):
                tp += 1
                tp_items.append(o)
            else:
                fp += 1
    fn = gt.n_positive - tp
    return tp, fp, fn, tp_items


def _quantiles(values: Sequence[float]) -> dict[int, float]:
    if not len(values):
        return {q: float("nan") for q in QUANTILE_LEVELS}
    arr = np.asarray(values, dtype=float)
    return {q: float(np.percentile(arr, q)) for q in QUANTILE_LEVELS}


def compute_metrics(outcomes: Sequence[QueryOutcome], gt: GtAssociation,
                    thresholds: Union[str, Sequence[float], None] = None,
                    operating_threshold: Optional[float] = None) -> MetricsReport:
    """Sweep score thresholds and summarize retrieval and pose accuracy.

    A retrieval is a match when ``ring_score >= threshold``; a match is a true
    positive when the retrieved id is among the query's ground-truth places.
    False negatives are positive queries without a true positive. Without an
    ``operating_threshold`` every top-1 retrieval counts as a match.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise EmptyOutcomes("no outcomes to evaluate")
    op = -math.inf if operating_threshold is None else float(operating_threshold)
    sweep = parse_thresholds(thresholds) or [op]
    n_pos = gt.n_positive
    degenerate = n_pos == 0

    pr, f1c, counts = [], [], []
    for t in sweep:
        tp, fp, fn, _ = _confusion(outcomes, gt, t)
        precision = tp / (tp + fp) if (tp + fp) else 1.0
        recall = tp / n_pos if n_pos else 0.0
        f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
        pr.append((t, precision, recall))
        f1c.append((t, f1))
        counts.append({"threshold": t, "tp": tp, "fp": fp, "fn": fn})

    top1 = sum(1 for o in outcomes if o.retrieved_id in gt.positives.get(o.query_id, ()))
    recall_at_1 = top1 / n_pos if n_pos else 0.0

    tp, fp, _, tp_items = _confusion(outcomes, gt, op)
    n_ok = sum(1 for o in tp_items if o.aligned)
    success = n_ok / (tp + fp) if (tp + fp) else 0.0
    success_tp = n_ok / tp if tp else 0.0
    tp_all, fp_all, _, items_all = _confusion(outcomes, gt, -math.inf)
    success_all = sum(1 for o in items_all if o.aligned) / (tp_all + fp_all)

    pts = sorted((r, p) for _, p, r in pr)
    auc = 0.0
    for (r0, p0), (r1, p1) in zip(pts, pts[1:]):
        auc += 0.5 * (p0 + p1) * (r1 - r0)

    return MetricsReport(
        recall_at_1=recall_at_1,
        pr_curve=pr,
        f1_curve=f1c,
        auc=auc,
        te_quantiles=_quantiles([o.te for o in tp_items]),
        re_quantiles=_quantiles([o.re for o in tp_items]),
        success_rate=success,
        success_rate_among_tp=success_tp,
        success_rate_all_top1=success_all,
        operating_threshold=op,
        n_queries=len(outcomes),
        n_positives=n_pos,
        degenerate_recall=degenerate,
        counts=counts,
    )


# ---------------------------------------------------------------------------
# trajectory error


@dataclass(frozen=True)
class AteResult:
    ate_mean: float
    per_frame: np.ndarray
    alignment: Pose3
    degenerate: bool


def ate(est_traj: Sequence[Pose3], gt_traj: Sequence[Pose3]) -> AteResult:
    """Absolute trajectory error after rigid least-squares alignment (no scale).

    ``degenerate`` flags collinear or coincident positions, where the
    rotation about the common line is not determined by the data.
    """
    if len(est_traj) != len(gt_traj):
        raise LengthMismatch(f"{len(est_traj)} estimated vs {len(gt_traj)} ground-truth poses")
    if len(est_traj) < 3:
        raise ValueError("ATE needs at least 3 poses")
    p = np.array([x.translation for x in est_traj])
    q = np.array([x.translation for x in gt_traj])
    R, t = kabsch(p, q)
    S = Pose3.from_rt(R, t)
    per = np.array([np.linalg.norm((g.inverse() @ S @ e).translation) for e, g in zip(est_traj, gt_traj)])
    sv = np.linalg.svd(p - p.mean(axis=0), compute_uv=False)
    degenerate = bool(sv[1] <= 1e-9 * max(sv[0], 1e-300))
    return AteResult(float(per.mean()), per, S, degenerate)


# ---------------------------------------------------------------------------
# report files


def _g(v) -> float:
    return float(f"{v:.6g}") if isinstance(v, float) and math.isfinite(v) else v


def _round_floats(obj):
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, float):
        if math.isinf(obj):
            return "-inf" if obj < 0 else "inf"
        if math.isnan(obj):
            return None
        return _g(obj)
    return obj


def emit_report(report: MetricsReport, out_dir) -> list[Path]:
    """Write ``metrics.json``, ``pr_curve.csv`` and ``f1_curve.csv`` (6 significant digits)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mpath = out / "metrics.json"
    mpath.write_text(json.dumps(_round_floats(report.to_dict()), indent=2, sort_keys=True))
    pr_path = out / "pr_curve.csv"
    with open(pr_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall"])
        for t, p, r in report.pr_curve:
            w.writerow([f"{t:.6g}", f"{p:.6g}", f"{r:.6g}"])
    f1_path = out / "f1_curve.csv"
    with open(f1_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "f1"])
        for t, f in report.f1_curve:
            w.writerow([f"{t:.6g}", f"{f:.6g}"])
    return [mpath, pr_path, f1_path]


def read_curve(path) -> list[tuple[float, ...]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [tuple(float(v) for v in row) for row in rows[1:]]


def load_report(out_dir) -> dict:
    return json.loads((Path(out_dir) / "metrics.json").read_text())


def outcomes_in_order(outcomes: Iterable[QueryOutcome]) -> list[QueryOutcome]:
    return sorted(outcomes, key=lambda o: o.query_id)
