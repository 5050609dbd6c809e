import math

import numpy as np
import pytest

from conftest import small_scene, yaw_diff_deg
from ringloc.config import IcpConfig, PipelineConfig, config_from_dict, load_config, save_config
from ringloc.errors import ConfigError, ConfigMismatch, EmptyIndex, NoCorrespondences, ScanError, ShapeMismatch
from ringloc.features import FeatureBEV, GridConfig
from ringloc.icp import icp_refine, kabsch
from ringloc.index_io import load_index, save_index
from ringloc.localization import (MapEntry, MapIndex, build_index, estimate_rotation, estimate_translation,
                                  localize, recognize, represent, ring_matrix)
from ringloc.poses import Pose3
from ringloc.scan_io import PointCloud, ScanRecord, preprocess, transform_cloud
from ringloc.synthetic import SceneSpec, generate_scene, render_scan
from ringloc.transforms import NormalizedTING, circular_corr, normalize_bev, normalize_ting

CFG = PipelineConfig()


def relative_view(cloud: PointCloud, rel: Pose3) -> PointCloud:
    """The cloud as seen from a sensor whose pose in the cloud's frame is ``rel``."""
    return transform_cloud(cloud, rel.inverse())


@pytest.fixture(scope="module")
def scene():
    return small_scene()


@pytest.fixture(scope="module")
def scene_index(scene):
    return build_index([ScanRecord(0, scene, Pose3())], CFG)


# --- index ------------------------------------------------------------------


def test_build_index_single_entry(scene_index):
    assert len(scene_index) == 1
    e = scene_index.entries[0]
    assert np.linalg.norm(e.nting.data) == pytest.approx(1.0, abs=1e-9)
    assert np.linalg.norm(e.bev.grid) == pytest.approx(1.0, abs=1e-9)
    assert e.nting.data.shape == (120, 61, 6)


def test_build_index_duplicates_and_errors(scene):
    idx = build_index([ScanRecord(0, scene, Pose3()), ScanRecord(1, scene, Pose3())], CFG)
    assert np.linalg.norm(idx.entries[0].nting.data - idx.entries[1].nting.data) <= 1e-12
    with pytest.raises(EmptyIndex):
        build_index([], CFG)
    with pytest.raises(ScanError) as info:
        build_index([ScanRecord(7, PointCloud([[0.0, 0.0, 0.0]] * 3), Pose3())], CFG)
    assert info.value.scan_id == 7
    with pytest.raises(ValueError):
        MapIndex([idx.entries[0], idx.entries[0]], CFG)


def test_build_index_parallel_matches_sequential(benchmark_run):
    _, maps, _, index, cfg = benchmark_run
    times = []
    par = build_index(maps[:4], cfg, jobs=2, timings=times)
    assert par.ids == [0, 1, 2, 3] and len(times) == 4
    for a, b in zip(par.entries, index.entries[:4]):
        np.testing.assert_array_equal(a.nting.data, b.nting.data)


def test_autocorrelation_sweep(benchmark_run):
    index = benchmark_run[3]
    for e in index.entries:
        assert circular_corr(e.nting, e.nting).max() == pytest.approx(1.0, abs=1e-9)
    ring = ring_matrix(index)
    np.testing.assert_allclose(np.diag(ring), 1.0, atol=1e-9)
    np.testing.assert_allclose(ring, ring.T, atol=1e-9)


# --- recognition ------------------------------------------------------------


def test_recognize_duplicate(benchmark_run):
    index = benchmark_run[3]
    top = recognize(index.entry(3).nting, index, 3)
    assert top[0].map_id == 3 and top[0].ring_score == pytest.approx(1.0, abs=1e-9)
    assert [c.ring_score for c in top] == sorted((c.ring_score for c in top), reverse=True)
    assert recognize(index.entry(3).nting, index, 1, exact_mode=True)[0].map_id == 3


def test_recognize_rotated_quarter_turn(benchmark_run):
    _, maps, _, index, cfg = benchmark_run
    rotated = transform_cloud(maps[6].cloud, Pose3.from_xyz_yaw(0, 0, 0, math.pi / 2))
    _, nting = represent(rotated, cfg)
    top = recognize(nting, index, 1)[0]
    assert top.map_id == 6
    assert top.ring_score >= 0.9


def test_recognize_shape_mismatch(scene_index):
    with pytest.raises(ShapeMismatch):
        recognize(NormalizedTING(np.ones((60, 31, 6))), scene_index)


def test_two_entry_construction_modes_agree():
    # Two normalized map TINGs with cross score k < 1 and a query mixing them:
    # the squared RING distances differ by exactly 2 (k - 1)(s1 - s2).
    rng = np.random.default_rng(0)
    a = normalize_ting(rng.random((24, 13, 2)))
    b = normalize_ting(rng.random((24, 13, 2)))
    cfg = PipelineConfig(grid=GridConfig(size=24, extent=12.0))
    blank = FeatureBEV(np.zeros((24, 24, 2)), cfg.grid)
    index = MapIndex([MapEntry(1, Pose3(), a, blank), MapEntry(2, Pose3(), b, blank)], cfg)
    ring = ring_matrix(index)
    k = ring[0, 1]
    assert ring[0, 0] == pytest.approx(1.0, abs=1e-12) and ring[1, 1] == pytest.approx(1.0, abs=1e-12)
    assert k < 1
    for w in (0.2, 0.45, 0.55, 0.8):
        q = normalize_ting(w * a.data + (1 - w) * np.roll(b.data, 5, axis=0))
        cands = recognize(q, index, 2)
        s = {c.map_id: c.ring_score for c in cands}
        d1 = (s[1] - 1) ** 2 + (s[2] - k) ** 2
        d2 = (s[1] - k) ** 2 + (s[2] - 1) ** 2
        assert d1 - d2 == pytest.approx(2 * (k - 1) * (s[1] - s[2]), abs=1e-12)
        exact = recognize(q, index, 1, exact_mode=True)[0]
        assert exact.map_id == cands[0].map_id == (1 if s[1] > s[2] else 2)


# --- rotation ----------------------------------------------------------------


def test_rotation_identity_and_pure_shift():
    rng = np.random.default_rng(1)
    q = normalize_ting(rng.random((120, 61, 2)))
    est = estimate_rotation(q, q)
    assert est.hypotheses == (0.0, math.pi)
    assert est.peak_value == pytest.approx(1.0, abs=1e-9)
    m = NormalizedTING(np.roll(q.data, 10, axis=0))
    est = estimate_rotation(q, m)
    assert math.degrees(est.hypotheses[0]) == pytest.approx(30.0, abs=3.0)
    assert abs(est.hypotheses[1] - est.hypotheses[0]) == pytest.approx(math.pi, abs=1e-12)
    with pytest.raises(ShapeMismatch):
        estimate_rotation(q, NormalizedTING(np.zeros((60, 61, 2))))


def test_rotation_with_translation(scene):
    rel = Pose3.from_xyz_yaw(2.0, -2.2, 0.0, math.radians(57))
    _, q = represent(relative_view(scene, rel), CFG)
    _, m = represent(scene, CFG)
    est = estimate_rotation(q, m)
    assert min(yaw_diff_deg(h, rel.yaw) for h in est.hypotheses) <= 3.0


# --- translation -------------------------------------------------------------


def test_translation_identity_picks_zero(scene):
    bev, _ = represent(scene, CFG)
    nb = normalize_bev(bev)
    est = estimate_translation(nb, nb, (0.0, math.pi))
    assert est.chosen_rotation == 0.0
    assert (est.dx, est.dy) == pytest.approx((0.0, 0.0), abs=1e-9)


def test_translation_pure_roll(scene):
    nb = normalize_bev(represent(scene, CFG)[0])
    res = CFG.grid.resolution
    m = FeatureBEV(np.roll(nb.grid, (4, -2), axis=(0, 1)), CFG.grid)
    est = estimate_translation(nb, m, (0.0,))
    assert est.dx == pytest.approx(4 * res, abs=0.5 * res)
    assert est.dy == pytest.approx(-2 * res, abs=0.5 * res)
    with pytest.raises(ShapeMismatch):
        estimate_translation(nb, FeatureBEV(np.zeros((60, 60, 6)), GridConfig(size=60)), (0.0,))


def test_known_pose_200_degrees(scene):
    rel = Pose3.from_xyz_yaw(3.0, -1.5, 0.0, math.radians(200))
    qbev, qn = represent(relative_view(scene, rel), CFG)
    mbev, mn = represent(scene, CFG)
    rot = estimate_rotation(qn, mn)
    tr = estimate_translation(normalize_bev(qbev), normalize_bev(mbev), rot.hypotheses)
    assert yaw_diff_deg(tr.chosen_rotation, rel.yaw) <= 3.0
    assert abs(tr.dx - 3.0) <= CFG.grid.resolution
    assert abs(tr.dy + 1.5) <= CFG.grid.resolution


# --- full pipeline -----------------------------------------------------------


def test_localize_identical_scan(benchmark_run):
    _, maps, _, index, cfg = benchmark_run
    res = localize(maps[4].cloud, index, cfg)
    assert res.map_id == 4 and not res.no_match
    assert res.ring_score == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(res.refined.translation, maps[4].pose.translation, atol=1e-6)
    np.testing.assert_allclose(res.refined.rotation, maps[4].pose.rotation, atol=1e-6)
    assert set(res.timings) == {"features", "representation", "retrieval", "solving", "refinement"}


def test_localize_known_transform(benchmark_run):
    _, maps, _, index, cfg = benchmark_run
    rel = Pose3.from_xyz_yaw(-2.5, 3.0, 0.0, math.radians(123))
    res = localize(relative_view(maps[2].cloud, rel), index, cfg, run_icp=False)
    assert res.map_id == 2
    assert yaw_diff_deg(res.pose3dof.yaw, rel.yaw) <= 3.0
    assert abs(res.pose3dof.x + 2.5) <= 1.17 and abs(res.pose3dof.y - 3.0) <= 1.17
    assert res.refined is None and "refinement" not in res.timings


def test_localize_disjoint_scene_is_no_match(benchmark_run):
    _, _, _, index, cfg = benchmark_run
    other = generate_scene(SceneSpec(seed=99))
    scan = preprocess(render_scan(other, Pose3.from_xyz_yaw(-60.0, 40.0, 1.8, 0.3)), cfg.preprocess)
    res = localize(scan, index, cfg, run_icp=False)
    assert res.ring_score < cfg.accept_threshold
    assert res.no_match


def test_localize_is_deterministic(benchmark_run):
    _, _, queries, index, cfg = benchmark_run
    a = localize(queries[7].cloud, index, cfg, top_k=3)
    b = localize(queries[7].cloud, index, cfg, top_k=3)
    assert a.to_dict()["candidates"] == b.to_dict()["candidates"]
    assert a.translation_peak == b.translation_peak
    assert a.refined.allclose(b.refined, 0.0)


def test_localize_composes_map_pose(benchmark_run):
    bench, _, queries, index, cfg = benchmark_run
    q = queries[11]
    res = localize(q.cloud, index, cfg, run_icp=False)
    expected = bench.map_pose(res.map_id) @ Pose3.from_xyz_yaw(res.pose3dof.x, res.pose3dof.y, 0.0,
                                                                 res.pose3dof.yaw)
    assert res.estimate.allclose(expected, 1e-12)
    assert np.linalg.norm(res.estimate.translation[:2] - q.pose.translation[:2]) < 2.0


# --- ICP -----------------------------------------------------------------------


def test_kabsch_recovers_rigid_motion():
    rng = np.random.default_rng(2)
    src = rng.normal(size=(50, 3))
    T = Pose3.from_xyz_yaw(1.0, -2.0, 0.5, 0.7)
    R, t = kabsch(src, T.apply(src))
    np.testing.assert_allclose(R, T.rotation, atol=1e-12)
    np.testing.assert_allclose(t, T.translation, atol=1e-12)


def test_icp_fixed_point(scene):
    res = icp_refine(scene, scene, Pose3(), voxel_size=0.4)
    assert res.fitness == 1.0
    assert res.pose.allclose(Pose3(), 1e-9)


def test_icp_recovers_small_offset(scene):
    T = Pose3.from_xyz_yaw(0.5, 0.3, 0.0, math.radians(5))
    moved = transform_cloud(scene, T.inverse())
    res = icp_refine(moved, scene, Pose3())
    np.testing.assert_allclose(res.pose.matrix(), T.matrix(), atol=1e-3)
    assert res.converged and res.inlier_rmse < 1e-3


def test_icp_half_turn_init_fails(benchmark_run):
    cloud = benchmark_run[1][0].cloud
    T = Pose3.from_xyz_yaw(0.5, 0.3, 0.0, math.radians(5))
    moved = transform_cloud(cloud, T.inverse())
    try:
        res = icp_refine(moved, cloud, Pose3.from_xyz_yaw(0, 0, 0, math.pi), voxel_size=0.4)
    except NoCorrespondences:
        return  # no overlap at all from the wrong initial guess
    assert res.fitness < IcpConfig().accept_fitness
    assert not res.pose.allclose(T, 0.5)


def test_icp_no_overlap():
    a = PointCloud(np.random.default_rng(3).normal(size=(20, 3)))
    b = PointCloud(a.xyz + 100.0)
    with pytest.raises(NoCorrespondences):
        icp_refine(a, b)


# --- persistence and config --------------------------------------------------


def test_index_round_trip(benchmark_run, tmp_path):
    _, _, queries, index, cfg = benchmark_run
    save_index(index, tmp_path / "idx")
    back = load_index(tmp_path / "idx", cfg)
    assert back.ids == index.ids
    for a, b in zip(index.entries, back.entries):
        assert np.abs(a.nting.data - b.nting.data).max() < 1e-6
        assert a.pose.allclose(b.pose, 1e-12)
        assert np.linalg.norm(b.nting.data) == pytest.approx(1.0, abs=1e-12)
    r1 = localize(queries[3].cloud, index, cfg, run_icp=False)
    r2 = localize(queries[3].cloud, back, cfg, run_icp=False)
    assert r1.map_id == r2.map_id and r1.ring_score == pytest.approx(r2.ring_score, abs=1e-5)


def test_index_config_mismatch(benchmark_run, tmp_path):
    index = benchmark_run[3]
    save_index(index, tmp_path / "idx")
    with pytest.raises(ConfigMismatch):
        load_index(tmp_path / "idx", PipelineConfig(grid=GridConfig(size=80)))
    # retrieval-only settings do not affect stored tensors
    load_index(tmp_path / "idx", PipelineConfig(top_k=5, accept_threshold=0.5))


def test_config_round_trip_and_unknown_keys(tmp_path):
    cfg = PipelineConfig(top_k=3, grid=GridConfig(size=80))
    back = load_config(save_config(cfg, tmp_path / "c.yaml"))
    assert back == cfg
    with pytest.raises(ConfigError):
        config_from_dict({"grid": {"sise": 80}})
    with pytest.raises(ConfigError):
        config_from_dict({"topk": 2})
    with pytest.raises((ConfigError, ValueError)):
        config_from_dict({"features": "fpfh"})
