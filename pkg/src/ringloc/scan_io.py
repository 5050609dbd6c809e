"""Point cloud and pose file I/O, preprocessing and rigid transforms."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import EmptyAfterFilter, EmptyCloud, FormatError, NonUnitQuaternion
from .poses import Pose3

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable set of 3D points (meters) with optional per-point intensity.

    ``dropped_count`` records how many non-finite points were discarded when
    the cloud was read from disk.
    """

    xyz: np.ndarray
    intensity: Optional[np.ndarray] = None
    frame_id: str = ""
    dropped_count: int = 0

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(xyz)):
            raise ValueError("point coordinates must be finite")
        xyz.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        if self.intensity is not None:
            inten = np.array(self.intensity, dtype=float).reshape(-1)
            if inten.shape[0] != xyz.shape[0]:
                raise ValueError("intensity length does not match point count")
            inten.setflags(write=False)
            object.__setattr__(self, "intensity", inten)

    def __len__(self) -> int:
        return self.xyz.shape[0]

    def __iter__(self):
        return iter(self.xyz)

    @property
    def is_empty(self) -> bool:
        return self.xyz.shape[0] == 0

    def subset(self, mask_or_index) -> PointCloud:
        inten = None if self.intensity is None else self.intensity[mask_or_index]
        return PointCloud(self.xyz[mask_or_index], inten, self.frame_id)

    def with_points(self, xyz: np.ndarray) -> PointCloud:
        return PointCloud(xyz, self.intensity, self.frame_id)


@dataclass(frozen=True)
class ScanRecord:
    id: int
    cloud: PointCloud
    pose: Pose3
    timestamp: Optional[float] = None


class GroundMode(str, Enum):
    Z_THRESHOLD = "z_threshold"
    RANSAC_PLANE = "ransac_plane"


@dataclass(frozen=True)
class PreprocessConfig:
    """Range crop and ground removal settings.

    In ``z_threshold`` mode points must lie more than ``ground_z`` above the
    ground level. The ground level is ``ground_reference`` (sensor-frame z)
    when given, otherwise the 5th percentile of the scan's z values.
    """

    range_max: float = 70.0
    ground_mode: GroundMode = GroundMode.Z_THRESHOLD
    ground_z: float = 0.3
    ground_reference: Optional[float] = None
    ransac_iters: int = 200
    ransac_dist: float = 0.2
    ransac_max_tilt_deg: float = 30.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ground_mode", GroundMode(self.ground_mode))
        if not self.range_max > 0:
            raise ValueError("range_max must be positive")
        if self.ransac_iters < 1 or self.ransac_dist <= 0:
            raise ValueError("ransac_iters >= 1 and ransac_dist > 0 required")


class CloudFormat(str, Enum):
    XYZ_ASCII = "xyz_ascii"
    PCD = "pcd"
    BIN_F32 = "bin_f32"


_SUFFIX_FORMATS = {
    ".xyz": CloudFormat.XYZ_ASCII,
    ".txt": CloudFormat.XYZ_ASCII,
    ".pcd": CloudFormat.PCD,
    ".bin": CloudFormat.BIN_F32,
}


def guess_format(path) -> CloudFormat:
    try:
        return _SUFFIX_FORMATS[Path(path).suffix.lower()]
    except KeyError:
        raise FormatError(f"cannot infer cloud format from suffix of {path}") from None


# ---------------------------------------------------------------------------
# loading


def _finite_cloud(xyz: np.ndarray, intensity: Optional[np.ndarray], frame_id: str) -> PointCloud:
    ok = np.all(np.isfinite(xyz), axis=1)
    if intensity is not None:
        ok &= np.isfinite(intensity)
    dropped = int(np.count_nonzero(~ok))
    if dropped:
        log.info("dropped %d non-finite points from %s", dropped, frame_id)
    if not np.any(ok):
        raise EmptyCloud(f"no finite points in {frame_id}")
    cloud = PointCloud(xyz[ok], None if intensity is None else intensity[ok], frame_id, dropped)
    return cloud


def _read_xyz_ascii(path: Path):
    rows = []
    width = None
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if width is None:
                width = len(parts)
                if width not in (3, 4):
                    raise FormatError(f"{path}:{lineno}: expected 3 or 4 columns, got {width}")
            elif len(parts) != width:
                raise FormatError(f"{path}:{lineno}: inconsistent column count")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise EmptyCloud(f"{path} has no points")
    arr = np.asarray(rows, dtype=float)
    return arr[:, :3], (arr[:, 3] if width == 4 else None)


def _read_bin_f32(path: Path):
    raw = path.read_bytes()
    if len(raw) == 0:
        raise EmptyCloud(f"{path} is empty")
    if len(raw) % 16:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of 16 bytes")
    arr = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(float)
    return arr[:, :3], arr[:, 3]


_PCD_TYPES = {("F", 4): "f4", ("F", 8): "f8", ("I", 1): "i1", ("I", 2): "i2", ("I", 4): "i4",
              ("I", 8): "i8", ("U", 1): "u1", ("U", 2): "u2", ("U", 4): "u4", ("U", 8): "u8"}


def _read_pcd(path: Path):
    with open(path, "rb") as fh:
        header = {}
        while True:
            line = fh.readline()
            if not line:
                raise FormatError(f"{path}: header ended before DATA line")
            text = line.decode("ascii", errors="replace").strip()
            if not text or text.startswith("#"):
                continue
            key, _, value = text.partition(" ")
            header[key.upper()] = value.split()
            if key.upper() == "DATA":
                break
        body = fh.read()

    try:
        fields = header["FIELDS"]
        sizes = [int(s) for s in header["SIZE"]]
        types = header["TYPE"]
        counts = [int(c) for c in header.get("COUNT", ["1"] * len(fields))]
        npts = int(header["POINTS"][0]) if "POINTS" in header else (
            int(header["WIDTH"][0]) * int(header["HEIGHT"][0]))
        mode = header["DATA"][0].lower()
    except (KeyError, ValueError, IndexError):
        raise FormatError(f"{path}: malformed PCD header") from None
    if not (len(fields) == len(sizes) == len(types) == len(counts)):
        raise FormatError(f"{path}: FIELDS/SIZE/TYPE/COUNT lengths differ")
    for name in ("x", "y", "z"):
        if name not in fields:
            raise FormatError(f"{path}: missing field {name!r}")
    if npts == 0:
        raise EmptyCloud(f"{path} has no points")

    if mode == "ascii":
        lines = [ln.split() for ln in body.decode("ascii", errors="replace").splitlines() if ln.strip()]
        if len(lines) < npts:
            raise FormatError(f"{path}: expected {npts} records, found {len(lines)}")
        ncols = sum(counts)
        try:
            table = np.array([[float(v) for v in ln] for ln in lines[:npts]], dtype=float)
        except ValueError:
            raise FormatError(f"{path}: non-numeric record") from None
        if table.ndim != 2 or table.shape[1] != ncols:
            raise FormatError(f"{path}: record width does not match header")
        offsets = np.cumsum([0] + counts[:-1])
        col = {f: table[:, o] for f, o in zip(fields, offsets)}
    elif mode == "binary":
        try:
            dtype = np.dtype([(f, "<" + _PCD_TYPES[(t.upper(), s)], (c,) if c > 1 else ())
                              for f, s, t, c in zip(fields, sizes, types, counts)])
        except KeyError:
            raise FormatError(f"{path}: unsupported field type") from None
        need = dtype.itemsize * npts
        if len(body) < need:
            raise FormatError(f"{path}: binary body is {len(body)} bytes, expected {need}")
        rec = np.frombuffer(body[:need], dtype=dtype)
        col = {f: np.asarray(rec[f], dtype=float) for f in fields}
    else:
        raise FormatError(f"{path}: unsupported DATA mode {mode!r}")

    xyz = np.column_stack([col["x"], col["y"], col["z"]])
    inten = col.get("intensity")
    return xyz, inten


def load_cloud(path, format: CloudFormat | str | None = None) -> PointCloud:
    """Read a point cloud from disk.

    Non-finite points are dropped and counted in ``dropped_count``.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    FormatError
        Malformed header or record.
    EmptyCloud
        The file holds no (finite) points.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    fmt = guess_format(path) if format is None else CloudFormat(format)
    reader = {CloudFormat.XYZ_ASCII: _read_xyz_ascii, CloudFormat.PCD: _read_pcd,
              CloudFormat.BIN_F32: _read_bin_f32}[fmt]
    xyz, inten = reader(path)
    return _finite_cloud(xyz, inten, path.stem)


def save_cloud(cloud: PointCloud, path, format: CloudFormat | str | None = None,
               binary: bool = True, precision: int = 9) -> Path:
    """Write a cloud. ``binary`` selects the PCD variant; ascii formats print
    ``precision`` significant digits."""
    path = Path(path)
    fmt = guess_format(path) if format is None else CloudFormat(format)
    xyz = cloud.xyz
    inten = cloud.intensity
    if fmt is CloudFormat.BIN_F32:
        rec = np.zeros((len(cloud), 4), dtype="<f4")
        rec[:, :3] = xyz
        if inten is not None:
            rec[:, 3] = inten
        path.write_bytes(rec.tobytes())
    elif fmt is CloudFormat.XYZ_ASCII:
        table = xyz if inten is None else np.column_stack([xyz, inten])
        np.savetxt(path, table, fmt=f"%.{precision}g")
    else:
        fields = ["x", "y", "z"] + (["intensity"] if inten is not None else [])
        n = len(cloud)
        head = "\n".join([
            "# .PCD v0.7 - Point Cloud Data file format",
            "VERSION 0.7",
            "FIELDS " + " ".join(fields),
            "SIZE " + " ".join(["4"] * len(fields)),
            "TYPE " + " ".join(["F"] * len(fields)),
            "COUNT " + " ".join(["1"] * len(fields)),
            f"WIDTH {n}",
            "HEIGHT 1",
            "VIEWPOINT 0 0 0 1 0 0 0",
            f"POINTS {n}",
            "DATA " + ("binary" if binary else "ascii"),
        ]) + "\n"
        table = xyz if inten is None else np.column_stack([xyz, inten])
        with open(path, "wb") as fh:
            fh.write(head.encode("ascii"))
            if binary:
                fh.write(np.ascontiguousarray(table, dtype="<f4").tobytes())
            else:
                for row in table:
                    fh.write((" ".join(f"{v:.{precision}g}" for v in row) + "\n").encode("ascii"))
    return path


# ---------------------------------------------------------------------------
# preprocessing


def _fit_ground_plane(xyz: np.ndarray, cfg: PreprocessConfig):
    """Best RANSAC plane among near-horizontal candidates, refined by least squares.

    Returns (unit normal with positive z, offset) so that signed height is
    ``xyz @ n + offset``; ``None`` when no acceptable plane is found.
    """
    rng = np.random.default_rng(cfg.seed)
    n = xyz.shape[0]
    if n < 3:
        return None
    min_nz = math.cos(math.radians(cfg.ransac_max_tilt_deg))
    best_count, best = 0, None
    for _ in range(cfg.ransac_iters):
        i, j, k = rng.choice(n, 3, replace=False)
        normal = np.cross(xyz[j] - xyz[i], xyz[k] - xyz[i])
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal /= norm
        if normal[2] < 0:
            normal = -normal
        if normal[2] < min_nz:
            continue
        d = -normal @ xyz[i]
        count = int(np.count_nonzero(np.abs(xyz @ normal + d) <= cfg.ransac_dist))
        if count > best_count:
            best_count, best = count, (normal, d)
    if best is None:
        return None
    normal, d = best
    inl = xyz[np.abs(xyz @ normal + d) <= cfg.ransac_dist]
    if inl.shape[0] >= 3:
        c = inl.mean(axis=0)
        _, _, vt = np.linalg.svd(inl - c, full_matrices=False)
        ref = vt[2] if vt[2, 2] >= 0 else -vt[2]
        if ref[2] >= min_nz:
            normal, d = ref, -ref @ c
    return normal, d


def preprocess(cloud: PointCloud, cfg: PreprocessConfig = PreprocessConfig()) -> PointCloud:
    """Crop to ``range_max`` (planar, inclusive) and remove the ground.

    Raises
    ------
    EmptyCloud
        Input is empty.
    EmptyAfterFilter
        Every point was removed.
    """
    if cloud.is_empty:
        raise EmptyCloud("cannot preprocess an empty cloud")
    xyz = cloud.xyz
    keep = np.hypot(xyz[:, 0], xyz[:, 1]) <= cfg.range_max
    if not np.any(keep):
        raise EmptyAfterFilter("no points within range_max")
    idx = np.flatnonzero(keep)
    sub = xyz[idx]
    if cfg.ground_mode is GroundMode.Z_THRESHOLD:
        ref = cfg.ground_reference
        if ref is None:
            ref = float(np.percentile(sub[:, 2], 5.0))
        above = sub[:, 2] > ref + cfg.ground_z
    else:
        plane = _fit_ground_plane(sub, cfg)
        if plane is None:
            above = np.ones(sub.shape[0], dtype=bool)
        else:
            normal, d = plane
            above = sub @ normal + d > cfg.ransac_dist
    idx = idx[above]
    if idx.size == 0:
        raise EmptyAfterFilter("ground removal left no points")
    return cloud.subset(idx)


def transform_cloud(cloud: PointCloud, pose: Pose3) -> PointCloud:
    """Rotate then translate every point by ``pose``."""
    return cloud.with_points(pose.apply(cloud.xyz))


# ---------------------------------------------------------------------------
# poses

_HEADER_3D = ["id", "x", "y", "z", "qx", "qy", "qz", "qw"]
_HEADER_2D = ["id", "x", "y", "yaw"]


def load_poses(path) -> list[tuple[int, Pose3]]:
    """Read a pose CSV with header ``id,x,y,z,qx,qy,qz,qw`` or ``id,x,y,yaw``.

    Planar rows are promoted to SE(3) with zero z, roll and pitch. Quaternions
    within 1e-3 of unit norm are renormalized; rows further off are rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty pose file") from None
        if header == _HEADER_3D:
            planar = False
        elif header == _HEADER_2D:
            planar = True
        else:
            raise FormatError(f"{path}: unexpected header {','.join(header)}")
        out: list[tuple[int, Pose3]] = []
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} columns")
            try:
                pid = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from None
            if not all(math.isfinite(v) for v in vals):
                raise FormatError(f"{path}:{lineno}: non-finite value")
            if out and pid <= out[-1][0]:
                raise FormatError(f"{path}:{lineno}: ids must be strictly increasing")
            if planar:
                pose = Pose3.from_xyz_yaw(vals[0], vals[1], 0.0, vals[2])
            else:
                q = np.asarray(vals[3:7])
                norm = float(np.linalg.norm(q))
                if abs(norm - 1.0) > 1e-3:
                    raise NonUnitQuaternion(f"{path}:{lineno}: quaternion norm {norm:.6f}")
                pose = Pose3(vals[0:3], q / norm)
            out.append((pid, pose))
    if not out:
        raise FormatError(f"{path}: no pose rows")
    return out


def save_poses(poses: Iterable[tuple[int, Pose3]], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_HEADER_3D)
        for pid, pose in poses:
            w.writerow([int(pid)] + [repr(float(v)) for v in pose.translation]
                       + [repr(float(v)) for v in pose.quaternion])
    return path


def scan_path_for_id(scans_dir, scan_id: int) -> Path:
    """Locate the cloud file for ``scan_id`` (file stem parses to the id)."""
    scans_dir = Path(scans_dir)
    for entry in sorted(os.listdir(scans_dir)):
        p = scans_dir / entry
        if p.suffix.lower() in _SUFFIX_FORMATS:
            try:
                if int(p.stem) == scan_id:
                    return p
            except ValueError:
                continue
    raise FileNotFoundError(f"no scan file for id {scan_id} in {scans_dir}")


def load_scan_records(scans_dir, poses_file) -> list[ScanRecord]:
    poses = load_poses(poses_file)
    records = []
    for pid, pose in poses:
        cloud = load_cloud(scan_path_for_id(scans_dir, pid))
        records.append(ScanRecord(pid, cloud, pose))
    return records


__all__: Sequence[str] = [
    "PointCloud", "ScanRecord", "PreprocessConfig", "GroundMode", "CloudFormat",
    "load_cloud", "save_cloud", "preprocess", "transform_cloud", "load_poses",
    "save_poses", "load_scan_records", "scan_path_for_id",
]
