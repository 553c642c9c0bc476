"""Object-centric action space and the deterministic baseline policies.

An action is a contact index into the observed object cloud, a 3D motion
vector executed after contact, and the leg that executes it. Learned
policies are out of scope here, but their artifacts plug in: per-point
critic maps (Q-values) and actor maps (motion parameters) with one or two
leg channels can be loaded from the columnar interchange format and pushed
through the same greedy / softmax selection machinery.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import PointCloud, RigidTransform, apply_transform

LEG_CHANNELS = ("front_left", "front_right")
Q_CLAMP = (-20.0, 0.0)
DEFAULT_MAX_MOTION = 0.35  # m, exceeds the leg reach by design


class NoPlanError(RuntimeError):
    """The geometric planner found no admissible face for the goal."""


@dataclass(frozen=True)
class ObjectCentricAction:
    contact_index: int
    motion_params: np.ndarray
    leg: str  # front_left | front_right

    def __post_init__(self):
        object.__setattr__(self, "motion_params",
                           np.asarray(self.motion_params, dtype=float).reshape(3))
        if self.leg not in LEG_CHANNELS:
            raise ValueError(f"unknown leg {self.leg!r}")
        if not np.all(np.isfinite(self.motion_params)):
            raise ValueError("motion params must be finite")


@dataclass
class CriticMap:
    q_values: np.ndarray  # (n_points, channels)

    def __post_init__(self):
        self.q_values = np.asarray(self.q_values, dtype=float)
        if self.q_values.ndim == 1:
            self.q_values = self.q_values[:, None]
        if self.q_values.shape[1] not in (1, 2):
            raise ValueError("critic map must have 1 or 2 leg channels")
        if np.any(self.q_values < Q_CLAMP[0] - 1e-9) or np.any(self.q_values > Q_CLAMP[1] + 1e-9):
            raise ValueError(f"q values must lie in {Q_CLAMP}")


@dataclass
class ActorMap:
    motion_params: np.ndarray  # (n_points, channels, 3)

    def __post_init__(self):
        self.motion_params = np.asarray(self.motion_params, dtype=float)
        if self.motion_params.ndim == 2:
            self.motion_params = self.motion_params[:, None, :]
        if self.motion_params.shape[2] != 3 or self.motion_params.shape[1] not in (1, 2):
            raise ValueError("actor map must be (n, 1|2, 3)")


@dataclass
class GoalSpec:
    """Target pose relative to the current object pose, plus the observed
    cloud mapped by it (index-correspondent)."""

    relative_transform: RigidTransform
    goal_cloud: PointCloud

    @staticmethod
    def from_cloud(relative_transform: RigidTransform, observed: PointCloud) -> "GoalSpec":
        return GoalSpec(relative_transform, apply_transform(relative_transform, observed))


def select_greedy(actor: ActorMap, critic: CriticMap) -> ObjectCentricAction:
    """Argmax over (point, leg) pairs; ties break to the lowest point index,
    then the left leg."""
    q = critic.q_values
    if q.size == 0:
        raise ValueError("empty critic map")
    if actor.motion_params.shape[:2] != q.shape:
        raise ValueError("actor/critic shape mismatch")
    flat = int(np.argmax(q))  # row-major: index-major then channel, ties resolve correctly
    idx, ch = divmod(flat, q.shape[1])
    return ObjectCentricAction(idx, actor.motion_params[idx, ch], LEG_CHANNELS[ch])


def select_softmax(critic: CriticMap, temperature: float, seed: int) -> tuple[int, int]:
    """Sample a (point, channel) pair with probability proportional to
    exp(q / temperature); deterministic per seed."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    q = critic.q_values.reshape(-1)
    logits = (q - np.max(q)) / temperature
    p = np.exp(logits)
    p /= p.sum()
    rng = np.random.default_rng(seed)
    flat = int(rng.choice(len(p), p=p))
    return divmod(flat, critic.q_values.shape[1])


def goal_flow(current: PointCloud, goal: PointCloud) -> tuple[np.ndarray, float]:
    """Per-point flow vectors goal_i - current_i and their mean magnitude."""
    if len(current) != len(goal):
        raise ValueError("clouds must have equal sizes (index correspondence)")
    flow = goal.points - current.points
    return flow, float(np.mean(np.linalg.norm(flow, axis=1)))


def reward_from_flow(mean_flow: float) -> float:
    return -mean_flow


# ---------------------------------------------------------------------------
# geometric helpers shared by the baselines


def _box_face_centers(obj) -> tuple[np.ndarray, np.ndarray]:
    """World-frame centers and outward normals of the object's bounding-box
    side faces (the planner's contact vocabulary, applied to every shape)."""
    verts = obj.shape.vertices()
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    c = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    centers, normals = [], []
    for axis in range(3):
        for sign in (1.0, -1.0):
            n = np.zeros(3)
            n[axis] = sign
            p = c.copy()
            p[axis] += sign * half[axis]
            centers.append(p)
            normals.append(n)
    R, t = obj.pose.rotation, obj.pose.translation
    return np.asarray(centers) @ R.T + t, np.asarray(normals) @ R.T


def _top_edge_midpoint(obj, push_dir: np.ndarray) -> np.ndarray:
    """Midpoint of the top edge of the face whose outward normal opposes the
    horizontal direction the top of the object should travel."""
    verts = obj.shape.vertices()
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    c = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    R, t = obj.pose.rotation, obj.pose.translation
    d_local = R.T @ push_dir
    d_local[2] = 0.0
    axis = int(np.argmax(np.abs(d_local[:2])))
    sign = -math.copysign(1.0, d_local[axis])  # face opposing the motion
    p = c.copy()
    p[axis] += sign * half[axis]
    p[2] = c[2] + half[2]  # top
    return R @ p + t


def _goal_decomposition(goal: GoalSpec, obj):
    """Split a relative goal into an optional flip part and a translation.

    A rotation that carries the object's up axis far from vertical is a
    flip; its direction is where the top face normal travels (projected to
    the ground plane)."""
    R = goal.relative_transform.rotation
    up_moves_to = R @ np.array([0.0, 0.0, 1.0])
    flip_needed = up_moves_to[2] < math.cos(math.radians(45.0))
    flip_dir = None
    if flip_needed:
        horiz = up_moves_to.copy()
        horiz[2] = 0.0
        n = np.linalg.norm(horiz)
        if n < 1e-9:
            raise NoPlanError("flip goal with degenerate direction")
        flip_dir = horiz / n
    centroid = obj.pose.translation
    displacement = goal.relative_transform.apply(centroid) - centroid
    return flip_needed, flip_dir, displacement


@dataclass
class PlanningBaselineParams:
    """Tuned once on the cube and then frozen for every object."""

    push_pitch_down_rad: float = math.radians(16.0)
    push_gain: float = 1.35
    flip_magnitude: float = 0.18
    max_motion: float = DEFAULT_MAX_MOTION
    min_push: float = 0.04


def planning_baseline(cloud: PointCloud, goal: GoalSpec, obj,
                      params: PlanningBaselineParams | None = None,
                      leg: str = "front_left") -> ObjectCentricAction:
    """Geometric contact policy: push at the center of the face opposing the
    goal displacement with a downward-pitched motion vector; flip by pushing
    the midpoint of the top edge opposite the flip direction horizontally.
    Flip-and-push goals execute the flip first.
    """
    p = params or PlanningBaselineParams()
    flip_needed, flip_dir, displacement = _goal_decomposition(goal, obj)

    if flip_needed:
        contact = _top_edge_midpoint(obj, flip_dir)
        motion = flip_dir * p.flip_magnitude
    else:
        d = displacement.copy()
        d[2] = 0.0
        dist = float(np.linalg.norm(d))
        if dist < 1e-9:
            raise NoPlanError("goal displacement is zero; nothing to push")
        d_hat = d / dist
        centers, normals = _box_face_centers(obj)
        align = normals @ (-d_hat)
        best = int(np.argmax(align))
        if align[best] < math.cos(math.radians(60.0)):
            raise NoPlanError("no face within 60 degrees of the push direction")
        contact = centers[best]
        mag = min(max(p.push_gain * dist, p.min_push), p.max_motion)
        motion = mag * (math.cos(p.push_pitch_down_rad) * d_hat
                        + math.sin(p.push_pitch_down_rad) * np.array([0.0, 0.0, -1.0]))

    idx = int(np.argmin(np.linalg.norm(cloud.points - contact, axis=1)))
    return ObjectCentricAction(idx, motion, leg)


def flow_baseline(cloud: PointCloud, goal: GoalSpec, obj,
                  params: PlanningBaselineParams | None = None,
                  leg: str = "front_left") -> ObjectCentricAction:
    """Same contact selection as the planner; motion replaced by the flow
    between the observed and goal clouds at the contact point."""
    base = planning_baseline(cloud, goal, obj, params, leg)
    flow, _ = goal_flow(cloud, goal.goal_cloud)
    return ObjectCentricAction(base.contact_index, flow[base.contact_index], leg)


def random_location_baseline(cloud: PointCloud, goal: GoalSpec, seed: int,
                             leg: str = "front_left") -> ObjectCentricAction:
    """Uniform contact index; motion from the flow rule at that point."""
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    rng = np.random.default_rng(seed)
    idx = int(rng.integers(len(cloud)))
    flow, _ = goal_flow(cloud, goal.goal_cloud)
    return ObjectCentricAction(idx, flow[idx], leg)


# ---------------------------------------------------------------------------
# actor/critic interchange format: columnar text, one entry per line
#   point_index leg_channel mx my mz q


def save_maps(actor: ActorMap, critic: CriticMap, path: str) -> None:
    n, ch = critic.q_values.shape
    with open(path, "w") as fh:
        fh.write(f"# legpress maps v1 points={n} channels={ch}\n")
        fh.write("# point_index leg_channel mx my mz q\n")
        for i in range(n):
            for c in range(ch):
                m = actor.motion_params[i, c]
                fh.write(f"{i} {c} {float(m[0])!r} {float(m[1])!r} {float(m[2])!r} "
                         f"{float(critic.q_values[i, c])!r}\n")


def load_maps(path: str) -> tuple[ActorMap, CriticMap]:
    entries = {}
    n = ch = 0
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            i, c = int(toks[0]), int(toks[1])
            entries[(i, c)] = [float(v) for v in toks[2:6]]
            n = max(n, i + 1)
            ch = max(ch, c + 1)
    motion = np.zeros((n, ch, 3))
    q = np.full((n, ch), Q_CLAMP[0])
    for (i, c), vals in entries.items():
        motion[i, c] = vals[:3]
        q[i, c] = vals[3]
    return ActorMap(motion), CriticMap(q)
