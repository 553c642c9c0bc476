"""Pose estimation by classical point-cloud registration.

Point-to-plane ICP with correspondence rejection supplies the single-shot
estimate. Robustness to ambiguous geometry comes from the augmentation
trick: the source cloud is additionally registered from several yaw-rotated
starts, every candidate is scored with two metrics (flow distance, which
prefers candidates that impute the smallest motion to the object, and
Chamfer distance, which measures alignment quality), candidates are ranked
per metric, and the lowest weighted rank sum wins. The known augmentation
rotation is composed back so the returned transform always maps the
original source onto the target.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geom import PointCloud, RigidTransform, apply_transform, compose, rotation_exp, rot_z
from .sensing import estimate_normals

CHAMFER_RANK_WEIGHT = 1.5  # preference weighting on the Chamfer ranking
REJECT_MEDIAN_FACTOR = 3.0
DIVERGE_PATIENCE = 5


@dataclass
class IcpResult:
    transform: RigidTransform
    residual: float
    converged: bool
    iterations: int


def flow_distance(source: PointCloud, t: RigidTransform) -> float:
    """Mean displacement the transform imputes to the source points."""
    if len(source) == 0:
        raise ValueError("empty cloud")
    moved = t.apply(source.points)
    return float(np.mean(np.linalg.norm(moved - source.points, axis=1)))


def chamfer_distance(a: PointCloud, b: PointCloud) -> float:
    """Symmetric mean nearest-neighbor distance (non-squared)."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty cloud")
    tree_a = cKDTree(a.points)
    tree_b = cKDTree(b.points)
    d_ab, _ = tree_b.query(a.points)
    d_ba, _ = tree_a.query(b.points)
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))


def _solve_point_to_plane(src, dst, nrm):
    """One linearized Gauss-Newton step: minimize sum(((R p + t - q) . n)^2)."""
    A = np.hstack([np.cross(src, nrm), nrm])
    b = -np.einsum("ij,ij->i", src - dst, nrm)
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    return RigidTransform(rotation_exp(x[:3]), x[3:])


def icp_register(source: PointCloud, target: PointCloud,
                 init: RigidTransform | None = None, max_iter: int = 50,
                 tol: float = 1e-6) -> IcpResult:
    """Point-to-plane ICP from source to target.

    Correspondences beyond 3x the median distance are rejected each
    iteration. Divergence (residual increasing for 5 straight iterations)
    returns the best transform seen with converged=False.
    """
    if len(source) < 10 or len(target) < 10:
        raise ValueError("need at least 10 points per cloud")
    if target.normals is None:
        target = estimate_normals(target, k_neighbors=min(12, len(target)))
    T = init if init is not None else RigidTransform.identity()
    tree = cKDTree(target.points)

    best_T, best_res = T, math.inf
    worse_streak = 0
    it = 0
    for it in range(1, max_iter + 1):
        moved = T.apply(source.points)
        dist, idx = tree.query(moved)
        med = float(np.median(dist))
        keep = dist <= max(REJECT_MEDIAN_FACTOR * med, 1e-9)
        if np.sum(keep) < 6:
            break
        dst = target.points[idx[keep]]
        nrm = target.normals[idx[keep]]
        res = float(np.sqrt(np.mean(np.einsum("ij,ij->i", moved[keep] - dst, nrm) ** 2)))
        if res < best_res - 1e-12:
            best_res, best_T = res, T
            worse_streak = 0
        else:
            worse_streak += 1
            if worse_streak >= DIVERGE_PATIENCE:
                return IcpResult(best_T, best_res, False, it)
        delta = _solve_point_to_plane(moved[keep], dst, nrm)
        T = compose(delta, T)
        step = float(np.linalg.norm(delta.translation)) + delta.rotation_angle()
        if step < tol:
            best_res, best_T = res, T
            return IcpResult(T, res, True, it)
    return IcpResult(best_T, best_res, True, it)


@dataclass
class RegistrationCandidate:
    augmentation_rotation: RigidTransform  # yaw about the source centroid
    estimated_transform: RigidTransform  # augmented source -> target
    combined_transform: RigidTransform  # original source -> target
    flow_distance: float
    chamfer_distance: float
    converged: bool
    rank_flow: int = 0
    rank_chamfer: int = 0
    weighted_rank_sum: float = 0.0


@dataclass
class RegistrationResult:
    transform: RigidTransform
    candidates: list
    winner_index: int
    degraded: bool  # no candidate converged


def _ranks(values) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=int)
    ranks[order] = np.arange(1, len(values) + 1)
    return ranks


def select_by_rank_sum(flows, chamfers, chamfer_weight: float = CHAMFER_RANK_WEIGHT):
    """Winner index + per-candidate (rank_flow, rank_chamfer, weighted sum).

    Ties break toward lower Chamfer distance, then lower index."""
    flows = np.asarray(flows, dtype=float)
    chamfers = np.asarray(chamfers, dtype=float)
    rf = _ranks(flows)
    rc = _ranks(chamfers)
    sums = rf + chamfer_weight * rc
    order = sorted(range(len(flows)), key=lambda i: (sums[i], chamfers[i], i))
    return order[0], rf, rc, sums


def register_with_augmentation(source: PointCloud, target: PointCloud,
                               n_aug: int = 6, seed: int = 0,
                               chamfer_weight: float = CHAMFER_RANK_WEIGHT,
                               max_iter: int = 50) -> RegistrationResult:
    """Multi-start registration with flow/Chamfer rank-sum selection.

    Candidate 0 is the unrotated source; candidates 1..n_aug start from
    random yaw rotations of the source about its centroid. Ties break
    toward lower Chamfer distance, then lower candidate index.
    """
    rng = np.random.default_rng(seed)
    centroid = source.centroid
    rotations = [RigidTransform.identity()]
    for _ in range(n_aug):
        yaw = rng.uniform(0.0, 2.0 * math.pi)
        rotations.append(RigidTransform.rotation_about(rot_z(yaw), centroid))

    candidates = []
    for R_aug in rotations:
        rotated = apply_transform(R_aug, source)
        est = icp_register(rotated, target, max_iter=max_iter)
        combined = compose(est.transform, R_aug)
        flow = flow_distance(source, combined)
        cham = chamfer_distance(apply_transform(combined, source), target)
        candidates.append(RegistrationCandidate(
            R_aug, est.transform, combined, flow, cham, est.converged))

    flows = [c.flow_distance for c in candidates]
    chams = [c.chamfer_distance for c in candidates]
    win, rf, rc, sums = select_by_rank_sum(flows, chams, chamfer_weight)
    for i, c in enumerate(candidates):
        c.rank_flow = int(rf[i])
        c.rank_chamfer = int(rc[i])
        c.weighted_rank_sum = float(sums[i])
    degraded = not any(c.converged for c in candidates)
    return RegistrationResult(candidates[win].combined_transform, candidates, win, degraded)


# ---------------------------------------------------------------------------
# ASCII interchange (x y z [nx ny nz] per line)


def save_cloud(cloud: PointCloud, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# legpress cloud v1 frame={cloud.frame} "
                 f"normals={int(cloud.normals is not None)}\n")
        for i, p in enumerate(cloud.points):
            line = f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}"
            if cloud.normals is not None:
                n = cloud.normals[i]
                line += f" {float(n[0])!r} {float(n[1])!r} {float(n[2])!r}"
            fh.write(line + "\n")


def load_cloud(path: str) -> PointCloud:
    pts, nrm = [], []
    frame = "world"
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line.split():
                    if tok.startswith("frame="):
                        frame = tok.split("=", 1)[1]
                continue
            vals = [float(v) for v in line.split()]
            pts.append(vals[:3])
            if len(vals) >= 6:
                nrm.append(vals[3:6])
    normals = np.asarray(nrm) if len(nrm) == len(pts) and pts else None
    return PointCloud(np.asarray(pts), normals, frame)
