import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ringloc.errors import EmptyAfterFilter, EmptyCloud, FormatError, NonUnitQuaternion
from ringloc.poses import Pose2, Pose3, wrap_angle
from ringloc.scan_io import (GroundMode, PointCloud, PreprocessConfig, load_cloud, load_poses, load_scan_records,
                             preprocess, save_cloud, save_poses, transform_cloud)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def random_pose(rng) -> Pose3:
    return Pose3(rng.uniform(-50, 50, 3), rng.normal(size=4))


# --- poses ------------------------------------------------------------------


def test_wrap_angle_range():
    assert wrap_angle(-1e-18) == 0.0
    assert wrap_angle(2 * math.pi) == 0.0
    assert wrap_angle(-math.pi / 2) == pytest.approx(1.5 * math.pi)
    assert Pose2(0, 0, 7.0).yaw == pytest.approx(7.0 - 2 * math.pi)


def test_pose3_quaternion_is_unit_and_canonical():
    p = Pose3((1, 2, 3), (0.0, 0.0, -0.6, -0.8))
    assert abs(np.linalg.norm(p.quaternion) - 1.0) <= 1e-9
    assert p.quaternion[3] >= 0
    with pytest.raises(ValueError):
        Pose3((0, 0, 0), (0, 0, 0, 0))


def test_pose3_inverse_and_composition():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = random_pose(rng), random_pose(rng)
        assert (a @ a.inverse()).allclose(Pose3(), 1e-12)
        np.testing.assert_allclose((a @ b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)


def test_pose3_from_xyz_yaw_round_trip():
    p = Pose3.from_xyz_yaw(1.0, -2.0, 0.5, 4.0)
    assert p.yaw == pytest.approx(4.0)
    q = p.to_pose2()
    assert (q.x, q.y) == (1.0, -2.0) and q.yaw == pytest.approx(4.0, abs=1e-12)


# --- cloud io ---------------------------------------------------------------


def test_xyz_ascii_three_lines(tmp_path):
    f = tmp_path / "c.xyz"
    f.write_text("1 2 3\n4 5 6\n7 8 9\n")
    c = load_cloud(f)
    assert len(c) == 3
    np.testing.assert_array_equal(c.xyz[2], [7, 8, 9])
    assert c.intensity is None


def test_bin_single_record(tmp_path):
    f = tmp_path / "one.bin"
    f.write_bytes(struct.pack("<4f", 1.5, -2.0, 3.25, 0.75))
    c = load_cloud(f)
    assert len(c) == 1
    np.testing.assert_array_equal(c.xyz[0], [1.5, -2.0, 3.25])
    assert c.intensity[0] == 0.75


def test_pcd_with_nan_drops_one(tmp_path):
    pts = np.arange(30, dtype=float).reshape(10, 3)
    pts[4, 1] = np.nan
    lines = ["VERSION 0.7", "FIELDS x y z", "SIZE 4 4 4", "TYPE F F F", "COUNT 1 1 1", "WIDTH 10", "HEIGHT 1",
             "POINTS 10", "DATA ascii"] + [" ".join(str(v) for v in row) for row in pts]
    f = tmp_path / "n.pcd"
    f.write_text("\n".join(lines) + "\n")
    c = load_cloud(f)
    assert len(c) == 9
    assert c.dropped_count == 1


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cloud(tmp_path / "missing.xyz")
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\x00" * 10)
    with pytest.raises(FormatError):
        load_cloud(bad)
    empty = tmp_path / "e.xyz"
    empty.write_text("")
    with pytest.raises(EmptyCloud):
        load_cloud(empty)
    ragged = tmp_path / "r.xyz"
    ragged.write_text("1 2 3\n4 5\n")
    with pytest.raises(FormatError):
        load_cloud(ragged)
    pcd = tmp_path / "h.pcd"
    pcd.write_text("VERSION 0.7\nFIELDS x y\nSIZE 4 4\nTYPE F F\nCOUNT 1 1\nPOINTS 1\nDATA ascii\n1 2\n")
    with pytest.raises(FormatError):
        load_cloud(pcd)


@pytest.mark.parametrize("suffix,kwargs,tol", [
    (".bin", {}, 1e-5),
    (".pcd", {"binary": True}, 1e-5),
    (".pcd", {"binary": False}, 1e-7),
    (".xyz", {}, 1e-7),
])
def test_save_load_round_trip(tmp_path, suffix, kwargs, tol):
    rng = np.random.default_rng(1)
    c = PointCloud(rng.uniform(-60, 60, (200, 3)), rng.uniform(0, 1, 200))
    back = load_cloud(save_cloud(c, tmp_path / f"c{suffix}", **kwargs))
    np.testing.assert_allclose(back.xyz, c.xyz, rtol=tol, atol=tol)
    np.testing.assert_allclose(back.intensity, c.intensity, rtol=tol, atol=tol)


# --- preprocessing ----------------------------------------------------------


def test_range_boundary_inclusive():
    c = PointCloud([[69.9, 0, 5.0], [70.1, 0, 5.0], [0, 70.0, 5.0]])
    out = preprocess(c, PreprocessConfig(range_max=70, ground_reference=0.0))
    np.testing.assert_array_equal(out.xyz[:, 1], [0, 70.0])


def test_z_threshold_split():
    rng = np.random.default_rng(2)
    plane = np.column_stack([rng.uniform(-30, 30, (2000, 2)), np.zeros(2000)])
    elevated = np.column_stack([rng.uniform(-30, 30, (100, 2)), rng.uniform(1, 2, 100)])
    out = preprocess(PointCloud(np.vstack([plane, elevated])), PreprocessConfig(ground_z=0.3))
    np.testing.assert_array_equal(out.xyz, elevated)


def test_ransac_removes_tilted_plane():
    rng = np.random.default_rng(3)
    xy = rng.uniform(-30, 30, (3000, 2))
    tilt = math.radians(8)
    plane = np.column_stack([xy, -1.8 + math.tan(tilt) * xy[:, 0] + rng.normal(0, 0.03, 3000)])
    objs = np.column_stack([rng.uniform(-30, 30, (500, 2)), rng.uniform(0.5, 5, 500)])
    objs[:, 2] += -1.8 + math.tan(tilt) * objs[:, 0]
    out = preprocess(PointCloud(np.vstack([plane, objs])), PreprocessConfig(ground_mode=GroundMode.RANSAC_PLANE))
    kept = {tuple(p) for p in out.xyz}
    removed_plane = sum(tuple(p) not in kept for p in plane)
    assert removed_plane / len(plane) >= 0.95
    assert sum(tuple(p) in kept for p in objs) / len(objs) >= 0.95


def test_preprocess_errors():
    with pytest.raises(EmptyAfterFilter):
        preprocess(PointCloud([[100.0, 0, 0]]), PreprocessConfig(range_max=70))
    with pytest.raises(EmptyAfterFilter):
        preprocess(PointCloud([[1.0, 0, 0], [2.0, 0, 0]]), PreprocessConfig(ground_reference=0.0))
    with pytest.raises(EmptyCloud):
        preprocess(PointCloud(np.zeros((0, 3))))


def test_preprocess_idempotent_with_fixed_ground_reference():
    rng = np.random.default_rng(4)
    c = PointCloud(np.column_stack([rng.uniform(-90, 90, (3000, 2)), rng.uniform(-2, 6, 3000)]))
    cfg = PreprocessConfig(ground_reference=-1.8)
    once = preprocess(c, cfg)
    np.testing.assert_array_equal(preprocess(once, cfg).xyz, once.xyz)


# --- transforms of clouds ---------------------------------------------------


def test_transform_identity_and_half_turn():
    c = PointCloud([[1.0, 0.0, 0.0]])
    np.testing.assert_array_equal(transform_cloud(c, Pose3()).xyz, c.xyz)
    out = transform_cloud(c, Pose3.from_xyz_yaw(0, 0, 0, math.pi)).xyz[0]
    np.testing.assert_allclose(out, [-1.0, 0.0, 0.0], atol=1e-12)


def test_transform_inverse_and_composition():
    rng = np.random.default_rng(5)
    c = PointCloud(rng.uniform(-50, 50, (300, 3)))
    a, b = random_pose(rng), random_pose(rng)
    np.testing.assert_allclose(transform_cloud(transform_cloud(c, a), a.inverse()).xyz, c.xyz, atol=1e-9)
    np.testing.assert_allclose(transform_cloud(transform_cloud(c, a), b).xyz, transform_cloud(c, b @ a).xyz,
                               atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(finite, finite, finite), min_size=2, max_size=20),
       st.tuples(finite, finite, finite), st.tuples(*[st.floats(-1, 1)] * 4).filter(
           lambda q: sum(v * v for v in q) > 0.1))
def test_transform_is_rigid(points, t, q):
    c = PointCloud(points)
    moved = transform_cloud(c, Pose3(t, q)).xyz
    d0 = np.linalg.norm(c.xyz[:, None] - c.xyz[None], axis=-1)
    d1 = np.linalg.norm(moved[:, None] - moved[None], axis=-1)
    np.testing.assert_allclose(d1, d0, atol=1e-9 * max(1.0, float(np.abs(c.xyz).max())))


# --- pose files -------------------------------------------------------------


def test_load_poses_rows(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("id,x,y,z,qx,qy,qz,qw\n0,1,2,0,0,0,0,1\n4,0,0,0,0,0,0,1.0005\n")
    (i0, p0), (i1, p1) = load_poses(f)
    assert (i0, i1) == (0, 4)
    np.testing.assert_array_equal(p0.translation, [1, 2, 0])
    np.testing.assert_allclose(p0.rotation, np.eye(3), atol=1e-15)
    assert abs(np.linalg.norm(p1.quaternion) - 1.0) < 1e-12

    g = tmp_path / "p2.csv"
    g.write_text("id,x,y,yaw\n3,5,-2,1.5708\n")
    (_, p), = load_poses(g)
    assert p.yaw == pytest.approx(1.5708, abs=1e-12)
    np.testing.assert_array_equal(p.translation, [5, -2, 0])


@pytest.mark.parametrize("body,err", [
    ("id,x,y,z,qx,qy,qz,qw\n0,0,0,0,0,0,0,1.01\n", NonUnitQuaternion),
    ("id,x,y,z,qx,qy,qz,qw\n1,0,0,0,0,0,0,1\n1,0,0,0,0,0,0,1\n", FormatError),
    ("a,b,c\n1,2,3\n", FormatError),
    ("id,x,y,yaw\n1,2,x,0\n", FormatError),
])
def test_load_poses_rejects(tmp_path, body, err):
    f = tmp_path / "p.csv"
    f.write_text(body)
    with pytest.raises(err):
        load_poses(f)


def test_pose_file_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    poses = [(i * 3, random_pose(rng)) for i in range(5)]
    back = load_poses(save_poses(poses, tmp_path / "p.csv"))
    for (i, p), (j, q) in zip(poses, back):
        assert i == j and p.allclose(q, 1e-12)


def test_load_scan_records(tmp_path):
    rng = np.random.default_rng(7)
    (tmp_path / "scans").mkdir()
    poses = [(i, random_pose(rng)) for i in range(3)]
    for i, _ in poses:
        save_cloud(PointCloud(rng.uniform(-5, 5, (10, 3))), tmp_path / "scans" / f"{i:06d}.bin")
    save_poses(poses, tmp_path / "poses.csv")
    recs = load_scan_records(tmp_path / "scans", tmp_path / "poses.csv")
    assert [r.id for r in recs] == [0, 1, 2]
    assert all(len(r.cloud) == 10 for r in recs)
