"""Rotations, rigid transforms and point-cloud containers shared by every module.

Conventions used throughout the stack:
  - all quantities SI (m, s, N, rad); unit conversions happen at config parsing
  - Euler angles are ZYX: R = Rz(yaw) @ Ry(pitch) @ Rx(roll), yaw applied last
  - world frame is x forward, y left, z up
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ROT_TOL = 1e-9
GIMBAL_MARGIN = 0.05  # rad, extraction rejected when |pitch| > pi/2 - margin


class GimbalLockError(ValueError):
    """Euler extraction requested too close to pitch = +-pi/2."""


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def skew(v) -> np.ndarray:
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def euler_zyx_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation matrix from ZYX Euler angles (roll about x first, yaw about z last)."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def matrix_to_euler_zyx(R: np.ndarray) -> tuple[float, float, float]:
    """Extract (roll, pitch, yaw) from a rotation matrix.

    Raises GimbalLockError when |pitch| > pi/2 - 0.05 rad; the controller's
    linearization is invalid there so no caller should ever need it.
    """
    sp = -float(R[2, 0])
    sp = min(1.0, max(-1.0, sp))
    pitch = math.asin(sp)
    if abs(pitch) > math.pi / 2.0 - GIMBAL_MARGIN:
        raise GimbalLockError(f"pitch {pitch:.4f} rad is inside the gimbal-lock margin")
    roll = math.atan2(float(R[2, 1]), float(R[2, 2]))
    yaw = math.atan2(float(R[1, 0]), float(R[0, 0]))
    return roll, pitch, yaw


def rotation_exp(omega_dt) -> np.ndarray:
    """Rodrigues map: rotation matrix for the axis-angle vector omega*dt."""
    w = np.asarray(omega_dt, dtype=float)
    th = float(np.linalg.norm(w))
    if th < 1e-12:
        return np.eye(3) + skew(w)
    k = w / th
    K = skew(k)
    return np.eye(3) + math.sin(th) * K + (1.0 - math.cos(th)) * (K @ K)


def is_rotation(R: np.ndarray, tol: float = ROT_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    if not np.all(np.isfinite(R)):
        return False
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(R) - 1.0) <= tol


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation back onto SO(3) (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.diag([1.0, 1.0, float(np.linalg.det(u @ vt))])
    return u @ D @ vt


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid transform x -> R @ x + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_euler(roll: float, pitch: float, yaw: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return RigidTransform(euler_zyx_to_matrix(roll, pitch, yaw), np.asarray(translation, dtype=float))

    @staticmethod
    def rotation_about(R: np.ndarray, center) -> "RigidTransform":
        """Rotation by R about an arbitrary center point."""
        c = np.asarray(center, dtype=float).reshape(3)
        R = np.asarray(R, dtype=float)
        return RigidTransform(R, c - R @ c)

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -(Rt @ self.translation))

    def rotation_angle(self) -> float:
        """Geodesic rotation magnitude in radians."""
        c = (float(np.trace(self.rotation)) - 1.0) / 2.0
        return math.acos(min(1.0, max(-1.0, c)))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a after b: (a o b)(x) = a(b(x))."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


@dataclass
class PointCloud:
    """Ordered 3D points with optional unit normals.

    Point order is meaningful: index i in one cloud corresponds to index i in
    a correspondent cloud (goal flow relies on this).
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    frame: str = "world"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise ValueError("normals count must equal points count")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def validate(self, tol: float = 1e-6) -> None:
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite points")
        if self.normals is not None:
            norms = np.linalg.norm(self.normals, axis=1)
            if np.max(np.abs(norms - 1.0)) > tol:
                raise ValueError("normals must have unit norm")


def apply_transform(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Map every point by R x + t and every normal by R; order preserved."""
    if len(cloud) == 0:
        raise ValueError("cannot transform an empty cloud")
    normals = None if cloud.normals is None else cloud.normals @ t.rotation.T
    return PointCloud(t.apply(cloud.points), normals, cloud.frame)
