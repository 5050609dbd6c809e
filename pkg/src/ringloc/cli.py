"""``ringloc`` command line: build-map, localize, eval, synth, selfcheck.

Exit codes: 0 success, 1 selfcheck failure, 2 usage / config / input error,
3 localization found no match above the acceptance threshold.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .config import PipelineConfig, config_from_dict, load_config
from .errors import ConfigError, RinglocError
from .evaluation import associate, compute_metrics, emit_report, outcome_from_poses
from .index_io import load_index, save_index
from .localization import build_index, localize
from .poses import Pose3
from .scan_io import ScanRecord, load_cloud, load_poses, load_scan_records, preprocess
from .synthetic import SceneSpec, SensorSpec, make_benchmark, save_benchmark

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_NO_MATCH = 3

log = logging.getLogger("ringloc")


class UsageError(Exception):
    """Bad arguments or inputs detected by the command itself."""


def _configure_logging() -> None:
    level = os.environ.get("RINGLOC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


def _timing_line(label: str, values: Sequence[float]) -> str:
    arr = np.asarray(values, dtype=float)
    return f"  {label:<16} mean {arr.mean() * 1e3:8.2f} ms  max {arr.max() * 1e3:8.2f} ms  total {arr.sum():7.3f} s"


# ---------------------------------------------------------------------------
# build-map


def cmd_build_map(args) -> int:
    scans_dir = _require(Path(args.scans_dir), "scans directory")
    poses_file = _require(Path(args.poses_file), "poses file")
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.top_k is not None:
        cfg = cfg.replace(top_k=args.top_k)
    t0 = time.perf_counter()
    raw = load_scan_records(scans_dir, poses_file)
    t_load = time.perf_counter() - t0
    pre_times, scans = [], []
    for rec in raw:
        t = time.perf_counter()
        scans.append(ScanRecord(rec.id, preprocess(rec.cloud, cfg.preprocess), rec.pose, rec.timestamp))
        pre_times.append(time.perf_counter() - t)
    rep_times: list[float] = []
    index = build_index(scans, cfg, keep_clouds=True, jobs=args.jobs, timings=rep_times)
    out = save_index(index, args.out_dir)
    print(f"indexed {len(index)} scans into {out}")
    print(f"  {'loading':<16} total {t_load:7.3f} s")
    print(_timing_line("preprocessing", pre_times))
    print(_timing_line("representation", rep_times))
    return EXIT_OK


# ---------------------------------------------------------------------------
# localize


def _query_id(path: Path, explicit: Optional[int]) -> Optional[int]:
    if explicit is not None:
        return explicit
    try:
        return int(path.stem)
    except ValueError:
        return None


def cmd_localize(args) -> int:
    query_path = _require(Path(args.query), "query scan")
    index_dir = _require(Path(args.index_dir), "index directory")
    cfg = load_config(args.config) if args.config else None
    index = load_index(index_dir, cfg)
    cfg = index.config
    if args.top_k is not None:
        cfg = cfg.replace(top_k=args.top_k)
    cloud = preprocess(load_cloud(query_path), cfg.preprocess)
    result = localize(cloud, index, cfg, run_icp=False if args.no_icp else None)

    payload = result.to_dict()
    payload["query"] = {"path": str(query_path), "id": _query_id(query_path, args.query_id)}
    payload["config_hash"] = cfg.representation_hash()

    print(f"query {query_path}")
    print("candidates (map_id, ring_score, k_theta):")
    for c in result.candidates:
        print(f"  {c.map_id} {c.ring_score!r} {c.k_theta}")
    p = result.pose3dof
    print(f"best map_id {result.map_id} ring_score {result.ring_score!r}"
          f" translation_peak {result.translation_peak!r}")
    print(f"relative 3-DoF x {p.x!r} y {p.y!r} yaw {p.yaw!r}")
    print(f"estimate translation {list(map(float, result.estimate.translation))!r}"
          f" quaternion {list(map(float, result.estimate.quaternion))!r}")
    if result.refined is not None:
        print(f"refined translation {list(map(float, result.refined.translation))!r}"
              f" quaternion {list(map(float, result.refined.quaternion))!r} fitness {result.icp_fitness!r}")
    print("timings:")
    for stage, sec in result.timings.items():
        print(f"  {stage:<16} {sec * 1e3:8.2f} ms")
    if args.json:
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json).write_text(json.dumps(payload, indent=2))
    if result.no_match:
        print(f"no match: ring_score {result.ring_score!r} below accept_threshold {cfg.accept_threshold!r}")
        return EXIT_NO_MATCH
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _pose_from_json(d) -> Optional[Pose3]:
    if d is None:
        return None
    return Pose3(d["translation"], d["quaternion"])


def _read_results(results_dir: Path) -> list[dict]:
    files = sorted(results_dir.glob("*.json"))
    if not files:
        raise UsageError(f"no result files in {results_dir}")
    rows = []
    for f in files:
        try:
            data = json.loads(f.read_text())
            best = data["best"]
            rows.append({
                "query_id": int(data["query"]["id"]),
                "map_id": int(best["map_id"]),
                "ring_score": float(best["ring_score"]),
                "pose3dof": (float(best["pose3dof"]["x"]), float(best["pose3dof"]["y"]),
                             float(best["pose3dof"]["yaw"])),
                "refined": _pose_from_json(best.get("refined")),
            })
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise UsageError(f"{f}: not a localization result ({type(exc).__name__}: {exc})") from None
    return rows


def cmd_eval(args) -> int:
    results_dir = _require(Path(args.results_dir), "results directory")
    gt = dict(load_poses(_require(Path(args.gt_poses), "ground-truth poses")))
    if args.map_poses:
        map_poses = dict(load_poses(_require(Path(args.map_poses), "map poses")))
    elif args.index:
        manifest = json.loads(_require(Path(args.index) / "manifest.json", "index manifest").read_text())
        map_poses = {int(e["id"]): _pose_from_json(e["pose"]) for e in manifest["entries"]}
    else:
        raise UsageError("eval needs --map-poses or --index")
    rows = _read_results(results_dir)
    missing = sorted({r["query_id"] for r in rows} - set(gt))
    if missing:
        raise UsageError(f"queries without ground truth: {missing[:10]}")
    unknown = sorted({r["map_id"] for r in rows} - set(map_poses))
    if unknown:
        raise UsageError(f"results reference unknown map ids: {unknown[:10]}")

    assoc = associate({r["query_id"]: gt[r["query_id"]] for r in rows}, map_poses, args.revisit)
    outcomes = [outcome_from_poses(r["query_id"], r["map_id"], r["ring_score"], map_poses[r["map_id"]],
                                   gt[r["query_id"]], r["pose3dof"], r["refined"])
                for r in sorted(rows, key=lambda r: r["query_id"])]
    op = args.operating_threshold
    if op is None and args.config:
        op = load_config(args.config).accept_threshold
    report = compute_metrics(outcomes, assoc, args.thresholds, op)
    emit_report(report, args.out_dir)
    print(f"queries {report.n_queries} positives {report.n_positives}")
    print(f"recall@1 {report.recall_at_1:.4f}  auc {report.auc:.4f}")
    print(f"success rate {report.success_rate:.4f} (among TP {report.success_rate_among_tp:.4f},"
          f" all top-1 {report.success_rate_all_top1:.4f})")
    print(f"wrote metrics to {args.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth

_BENCH_KEYS = {"place_density", "query_spacing", "loop_length", "lateral_offset", "sensor_height", "seed"}


def _spec_section(cls, data, name):
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected a mapping")
    names = set(cls.__dataclass_fields__)
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def load_synth_spec(path: Optional[str]) -> tuple[SceneSpec, SensorSpec, dict]:
    """Read a synth spec (sections ``scene``, ``sensor``, ``benchmark``); defaults when ``path`` is None."""
    data = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"spec file not found: {p}")
        data = yaml.safe_load(p.read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: expected a mapping")
    unknown = sorted(set(data) - {"scene", "sensor", "benchmark"})
    if unknown:
        raise ConfigError(f"spec: unknown sections {unknown}")
    scene = _spec_section(SceneSpec, data.get("scene"), "scene")
    sensor = _spec_section(SensorSpec, data.get("sensor"), "sensor")
    bench = dict(data.get("benchmark") or {})
    bad = sorted(set(bench) - _BENCH_KEYS)
    if bad:
        raise ConfigError(f"benchmark: unknown keys {bad}")
    return scene, sensor, bench


def cmd_synth(args) -> int:
    scene, sensor, bench = load_synth_spec(args.spec)
    if args.seed is not None:
        bench["seed"] = args.seed
    t0 = time.perf_counter()
    b = make_benchmark(scene, sensor=sensor, **bench)
    out = save_benchmark(b, args.out_dir)
    print(f"wrote {len(b.map_scans)} map scans and {len(b.query_scans)} queries to {out}"
          f" in {time.perf_counter() - t0:.2f} s")
    return EXIT_OK


# ---------------------------------------------------------------------------
# selfcheck


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    results = run_selfcheck()
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ringloc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ringloc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-map", help="index a directory of map scans")
    p.add_argument("scans_dir")
    p.add_argument("poses_file")
    p.add_argument("out_dir")
    p.add_argument("--config")
    p.add_argument("--top-k", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_build_map)

    p = sub.add_parser("localize", help="localize one query scan against an index")
    p.add_argument("query")
    p.add_argument("index_dir")
    p.add_argument("--config")
    p.add_argument("--top-k", type=int)
    p.add_argument("--json", metavar="PATH")
    p.add_argument("--query-id", type=int)
    p.add_argument("--no-icp", action="store_true")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("eval", help="metrics over a directory of localize --json results")
    p.add_argument("results_dir")
    p.add_argument("gt_poses")
    p.add_argument("out_dir")
    p.add_argument("--map-poses")
    p.add_argument("--index")
    p.add_argument("--config")
    p.add_argument("--thresholds", default="0:1:0.05")
    p.add_argument("--operating-threshold", type=float)
    p.add_argument("--revisit", type=float, default=10.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic benchmark")
    p.add_argument("out_dir")
    p.add_argument("--spec")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("selfcheck", help="run the built-in invariant suite")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RinglocError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
