"""Synthetic egocentric depth sensing.

Object clouds are produced by sampling the analytic shape surfaces (no
rasterizer), culling to the camera frustum and backfaces, then applying
spherical-flipping hidden point removal so only camera-visible surface
remains, and finally resampling to the exact requested point count.
Everything is deterministic per seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .config import CameraConfig
from .geom import PointCloud, RigidTransform, rot_y
from .simworld import WorldState

HPR_RADIUS_FACTOR = 100.0  # Katz heuristic: R = factor * max range


class EmptyObservationError(RuntimeError):
    """Object entirely outside the camera frustum."""


@dataclass
class CameraModel:
    width: int = 80
    height: int = 60
    horizontal_fov_deg: float = 71.36
    mount_offset: np.ndarray = None  # trunk frame
    mount_pitch_deg: float = 65.0  # rotation about trunk y axis

    def __post_init__(self):
        if self.mount_offset is None:
            self.mount_offset = np.array([0.24, 0.0, 0.14])
        self.mount_offset = np.asarray(self.mount_offset, dtype=float).reshape(3)
        if self.width < 1 or self.height < 1:
            raise ValueError("camera resolution must be at least 1x1")
        if not 0.0 < self.horizontal_fov_deg < 180.0:
            raise ValueError("horizontal fov must be in (0, 180) degrees")

    @staticmethod
    def from_config(cfg: CameraConfig) -> "CameraModel":
        return CameraModel(cfg.width, cfg.height, cfg.horizontal_fov_deg,
                           np.asarray(cfg.offset), cfg.pitch_deg)

    def pose_in_world(self, trunk_position, trunk_rotation) -> RigidTransform:
        """Camera pose; optical axis z points out of the lens, x right in the
        image, y down."""
        pitch = math.radians(self.mount_pitch_deg)
        look = rot_y(pitch) @ np.array([1.0, 0.0, 0.0])  # forward, pitched down
        z_cam = look
        x_cam = np.array([0.0, -1.0, 0.0])  # robot's right
        y_cam = np.cross(z_cam, x_cam)
        R_mount = np.column_stack([x_cam, y_cam, z_cam])
        R = np.asarray(trunk_rotation) @ R_mount
        t = np.asarray(trunk_position) + np.asarray(trunk_rotation) @ self.mount_offset
        return RigidTransform(R, t)

    @property
    def tan_half_fov(self) -> tuple[float, float]:
        th = math.tan(math.radians(self.horizontal_fov_deg) / 2.0)
        tv = th * self.height / self.width
        return th, tv

    def in_frustum(self, points_cam: np.ndarray, near: float = 0.01) -> np.ndarray:
        th, tv = self.tan_half_fov
        z = points_cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.abs(points_cam[:, 0] / z)
            v = np.abs(points_cam[:, 1] / z)
        return (z > near) & (u <= th) & (v <= tv)


def hidden_point_removal(cloud: PointCloud, viewpoint, radius_param: float | None = None) -> np.ndarray:
    """Katz-style visibility: spherical flipping about the viewpoint followed
    by a convex hull; returns indices of visible points.

    Degenerate inputs (too few or collinear points) report everything
    visible, which is the conservative answer for a sensor model."""
    pts = cloud.points
    if len(pts) == 0:
        raise ValueError("empty cloud")
    vp = np.asarray(viewpoint, dtype=float).reshape(3)
    rel = pts - vp
    norms = np.linalg.norm(rel, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("viewpoint coincides with a cloud point")
    R = radius_param if radius_param is not None else HPR_RADIUS_FACTOR * float(norms.max())
    flipped = rel + 2.0 * (R - norms)[:, None] * rel / norms[:, None]
    try:
        hull = ConvexHull(np.vstack([flipped, np.zeros(3)]))
    except QhullError:
        return _hpr_degenerate(rel, norms, flipped)
    visible = hull.vertices[hull.vertices < len(pts)]
    return np.sort(visible)


def _hpr_degenerate(rel, norms, flipped):
    """Low-dimensional clouds the hull cannot handle.

    A cloud collinear with the view ray still has a crisp answer (nearest
    point per direction occludes the rest); anything else degenerate is
    reported fully visible, the conservative sensor-model answer."""
    dirs = rel / norms[:, None]
    # rank of the direction set seen from the viewpoint
    _, s, vt = np.linalg.svd(dirs, full_matrices=False)
    rank = int(np.sum(s > 1e-9 * s[0])) if s[0] > 0 else 0
    if rank == 1:
        axis = vt[0]
        proj = dirs @ axis
        visible = []
        for sign in (1.0, -1.0):
            side = np.flatnonzero(proj * sign > 0.5)
            if len(side):
                visible.append(side[np.argmin(norms[side])])
        return np.sort(np.array(visible, dtype=int))
    if rank == 2:
        basis = vt[:2]
        pts2 = flipped @ basis.T
        try:
            hull = ConvexHull(np.vstack([pts2, np.zeros(2)]))
        except QhullError:
            return np.arange(len(rel))
        visible = hull.vertices[hull.vertices < len(rel)]
        return np.sort(visible)
    return np.arange(len(rel))


def estimate_normals(cloud: PointCloud, k_neighbors: int = 12,
                     viewpoint=None) -> PointCloud:
    """Per-point normals from the smallest local covariance eigenvector,
    oriented toward the viewpoint when one is given."""
    pts = cloud.points
    n = len(pts)
    if n < 3:
        raise ValueError("need at least 3 points for normal estimation")
    k = min(k_neighbors, n)
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k)
    normals = np.zeros((n, 3))
    fallback = None
    for i in range(n):
        nb = pts[idx[i]]
        cov = np.cov(nb.T)
        w, v = np.linalg.eigh(cov)
        if w[1] < 1e-14:  # degenerate (duplicates or collinear): reuse a neighbor
            normals[i] = fallback if fallback is not None else np.array([0.0, 0.0, 1.0])
            continue
        normals[i] = v[:, 0]
        fallback = normals[i]
    if viewpoint is not None:
        to_vp = np.asarray(viewpoint, dtype=float) - pts
        flip = np.einsum("ij,ij->i", normals, to_vp) < 0.0
        normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts.copy(), normals, cloud.frame)


def _resample(pts, nrm, n_points, rng):
    m = len(pts)
    if m >= n_points:
        idx = rng.choice(m, size=n_points, replace=False)
    else:
        idx = np.concatenate([np.arange(m), rng.choice(m, size=n_points - m, replace=True)])
    return pts[idx], nrm[idx]


def sample_object_surface(obj, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """World-frame surface points + outward normals of a posed object."""
    pts, nrm = obj.shape.sample_surface(rng, n)
    R, t = obj.pose.rotation, obj.pose.translation
    return pts @ R.T + t, nrm @ R.T


def full_scan(obj, n_points: int, seed: int) -> PointCloud:
    """Occlusion-free surface scan (the registration target side)."""
    rng = np.random.default_rng(seed)
    pts, nrm = sample_object_surface(obj, n_points, rng)
    return PointCloud(pts, nrm, "world")


def render_object_cloud(world: WorldState, cam: CameraModel, object_index: int,
                        n_points: int, seed: int, oversample: int = 6) -> PointCloud:
    """Camera-visible object surface as exactly n_points world-frame points
    with outward normals. Deterministic per seed.

    Raises EmptyObservationError when nothing falls inside the frustum."""
    rng = np.random.default_rng(seed)
    obj = world.objects[object_index]
    pts, nrm = sample_object_surface(obj, max(n_points * oversample, 1200), rng)

    pose = cam.pose_in_world(world.robot.srb.position, world.robot.srb.rotation())
    vp = pose.translation
    inv = pose.inverse()
    pts_cam = inv.apply(pts)
    keep = cam.in_frustum(pts_cam)
    keep &= np.einsum("ij,ij->i", nrm, vp - pts) > 0.0  # backface cull
    if not np.any(keep):
        raise EmptyObservationError(f"object {object_index} outside the camera frustum")
    pts, nrm = pts[keep], nrm[keep]

    vis = hidden_point_removal(PointCloud(pts, frame="world"), vp)
    pts, nrm = pts[vis], nrm[vis]
    pts, nrm = _resample(pts, nrm, n_points, rng)
    return PointCloud(pts, nrm, "world")


def render_background_cloud(world: WorldState, cam: CameraModel, n_points: int,
                            seed: int) -> PointCloud:
    """Ground-plane points inside the frustum (kept in traces for parity with
    the observation definition; the policy does not consume it)."""
    rng = np.random.default_rng(seed)
    pose = cam.pose_in_world(world.robot.srb.position, world.robot.srb.rotation())
    th, tv = cam.tan_half_fov
    pts = []
    tries = 0
    while len(pts) < n_points and tries < 200 * n_points:
        tries += 1
        u = rng.uniform(-th, th)
        v = rng.uniform(-tv, tv)
        ray = pose.rotation @ np.array([u, v, 1.0])
        if ray[2] > -1e-6:
            continue
        s = -pose.translation[2] / ray[2]
        pts.append(pose.translation + s * ray)
    if not pts:
        raise EmptyObservationError("ground plane not visible")
    pts = np.asarray(pts)
    if len(pts) < n_points:
        pts = pts[rng.choice(len(pts), size=n_points, replace=True)]
    normals = np.tile(np.array([0.0, 0.0, 1.0]), (n_points, 1))
    return PointCloud(pts[:n_points], normals, "world")
