"""Planar and spatial rigid poses.

Quaternions are stored scalar-last, ``(qx, qy, qz, qw)``, matching the pose
CSV column order. A ``Pose3`` maps points from its local (sensor) frame into
the parent frame: ``p_parent = R @ p_local + t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Wrap an angle to ``[0, 2*pi)``."""
    a = math.fmod(angle, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2*pi
    return 0.0 if a >= TWO_PI else a


def rot2(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2:
    """Planar pose: translation in meters and yaw in radians."""

    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    def to_pose3(self, z: float = 0.0) -> Pose3:
        return Pose3.from_xyz_yaw(self.x, self.y, z, self.yaw)


@dataclass(frozen=True, eq=False)
class Pose3:
    """Rigid transform in SE(3)."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quaternion: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        q = np.array(self.quaternion, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("quaternion must be finite and nonzero")
        if abs(n - 1.0) > 1e-9:
            q = q / n
        # canonical hemisphere keeps equal rotations bitwise comparable
        if q[3] < 0.0:
            q = -q
        t.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "quaternion", q)

    @classmethod
    def identity(cls) -> Pose3:
        return cls()

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> Pose3:
        T = np.asarray(T, dtype=float)
        return cls(T[:3, 3], Rotation.from_matrix(T[:3, :3]).as_quat())

    @classmethod
    def from_rt(cls, R: np.ndarray, t) -> Pose3:
        return cls(t, Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat())

    @classmethod
    def from_xyz_yaw(cls, x: float, y: float, z: float, yaw: float) -> Pose3:
        h = 0.5 * yaw
        return cls((x, y, z), (0.0, 0.0, math.sin(h), math.cos(h)))

    @property
    def rotation(self) -> np.ndarray:
        return Rotation.from_quat(self.quaternion).as_matrix()

    @property
    def yaw(self) -> float:
        R = self.rotation
        return wrap_angle(math.atan2(R[1, 0], R[0, 0]))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> Pose3:
        R = self.rotation
        return Pose3.from_rt(R.T, -R.T @ self.translation)

    def __matmul__(self, other: Pose3) -> Pose3:
        """Composition ``self @ other``: apply ``other`` first, then ``self``."""
        R = self.rotation
        return Pose3.from_rt(R @ other.rotation, R @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def to_pose2(self) -> Pose2:
        return Pose2(self.translation[0], self.translation[1], self.yaw)

    def angle_to(self, other: Pose3) -> float:
        """Geodesic rotation angle between two poses, in radians."""
        return float((Rotation.from_quat(self.quaternion).inv() * Rotation.from_quat(other.quaternion)).magnitude())

    def allclose(self, other: Pose3, atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix(), other.matrix(), atol=atol, rtol=0.0))

    def __repr__(self) -> str:
        t = ", ".join(f"{v:.4f}" for v in self.translation)
        q = ", ".join(f"{v:.4f}" for v in self.quaternion)
        return f"Pose3(t=[{t}], q=[{q}])"
