import math

import numpy as np
import pytest

from ringloc.config import PipelineConfig
from ringloc.localization import build_index
from ringloc.scan_io import PointCloud, ScanRecord, preprocess
from ringloc.synthetic import SceneSpec, SensorSpec, make_benchmark, make_rng, sample_box, sample_post, sample_wall


def small_scene(seed=3) -> PointCloud:
    """Asymmetric walls, a box and two posts around the origin (sensor frame)."""
    rng = make_rng(seed)
    parts = [
        sample_wall(rng, (4.0, 3.0), (25.0, 3.0), 6.0, 2.0),
        sample_wall(rng, (4.0, 3.0), (4.0, 18.0), 6.0, 2.0),
        sample_wall(rng, (-20.0, -12.0), (-5.0, -25.0), 4.0, 2.0),
        sample_box(rng, (-15.0, 10.0), (5.0, 3.0), 3.0, 0.4, 2.0),
        sample_post(rng, (12.0, -15.0), 0.4, 5.0, 3.0),
        sample_post(rng, (-3.0, 22.0), 0.3, 4.0, 3.0),
    ]
    return PointCloud(np.vstack(parts))


@pytest.fixture(scope="session")
def scene_cloud():
    return small_scene()


def preprocessed(bench, cfg):
    pp = lambda r: ScanRecord(r.id, preprocess(r.cloud, cfg.preprocess), r.pose)
    return [pp(r) for r in bench.map_scans], [pp(r) for r in bench.query_scans]


@pytest.fixture(scope="session")
def benchmark_run():
    """Default benchmark (10 map scans, 40 queries), preprocessed and indexed."""
    cfg = PipelineConfig()
    bench = make_benchmark(SceneSpec(seed=1), 20.0, 5.0, SensorSpec(), seed=2)
    maps, queries = preprocessed(bench, cfg)
    index = build_index(maps, cfg)
    return bench, maps, queries, index, cfg


def yaw_diff_deg(a, b):
    d = math.fmod(abs(a - b), 2 * math.pi)
    return math.degrees(min(d, 2 * math.pi - d))
