"""Rigid-body world for desk-scale loco-manipulation.

Model: the robot is a single rigid trunk; each of the four 3-DOF legs is
massless and terminates in a small point-mass foot. Commanded joint torques
map to a foot-tip force through the transposed leg Jacobian; the reaction
acts on the trunk at the foot point, which is what makes the trunk dynamics
exactly the single-rigid-body model the force controller assumes. Ground and
object interaction is penalty contact (spring-damper normal, regularized
Coulomb friction) integrated with semi-implicit Euler at a fixed dt.

Angular state is advanced in momentum form (L = I w updated, w recovered
from the new orientation), so free tumbling conserves angular momentum to
machine precision instead of drifting with the naive w-update.

Leg numbering: 0 = front-left, 1 = front-right, 2 = rear-left,
3 = rear-right. World frame: x forward, y left, z up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ContactConfig, RobotConfig, SimConfig, StackConfig
from .geom import (
    GimbalLockError,
    RigidTransform,
    euler_zyx_to_matrix,
    matrix_to_euler_zyx,
    orthonormalize,
    rotation_exp,
)

LEG_NAMES = ("front_left", "front_right", "rear_left", "rear_right")
FRONT_LEFT, FRONT_RIGHT, REAR_LEFT, REAR_RIGHT = 0, 1, 2, 3

_VEL_LIMIT = 100.0  # m/s; anything past this is a blown-up simulation
_RENORM_EVERY = 64  # steps between orientation re-orthonormalizations


def _cross(a, b) -> np.ndarray:
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


class SimulationDivergence(RuntimeError):
    """State left the numerically meaningful envelope."""


# ---------------------------------------------------------------------------
# robot state


@dataclass
class SrbState:
    """13-component trunk state: rpy, position, world angular velocity,
    linear velocity and the constant gravity placeholder the MPC expects."""

    rpy: np.ndarray
    position: np.ndarray
    angular_velocity: np.ndarray
    linear_velocity: np.ndarray
    gravity_placeholder: float = 9.81

    def __post_init__(self):
        self.rpy = np.asarray(self.rpy, dtype=float).reshape(3).copy()
        self.position = np.asarray(self.position, dtype=float).reshape(3).copy()
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=float).reshape(3).copy()
        self.linear_velocity = np.asarray(self.linear_velocity, dtype=float).reshape(3).copy()

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rpy, self.position, self.angular_velocity,
                               self.linear_velocity, [self.gravity_placeholder]])

    def rotation(self) -> np.ndarray:
        return euler_zyx_to_matrix(*self.rpy)

    def copy(self) -> "SrbState":
        return SrbState(self.rpy, self.position, self.angular_velocity,
                        self.linear_velocity, self.gravity_placeholder)


@dataclass
class LegModel:
    hip_offset: np.ndarray  # trunk frame, from trunk COM
    side: float  # +1 left, -1 right
    link_lengths: tuple  # (abduction offset, thigh, calf)
    joint_angles: np.ndarray = field(default_factory=lambda: np.zeros(3))
    joint_velocities: np.ndarray = field(default_factory=lambda: np.zeros(3))
    joint_limits: tuple = ((-0.86, 0.86), (-1.6, 2.4), (-2.7, -0.05))

    def __post_init__(self):
        self.hip_offset = np.asarray(self.hip_offset, dtype=float).reshape(3)
        self.joint_angles = np.asarray(self.joint_angles, dtype=float).reshape(3).copy()
        self.joint_velocities = np.asarray(self.joint_velocities, dtype=float).reshape(3).copy()

    @property
    def max_reach(self) -> float:
        return self.link_lengths[1] + self.link_lengths[2]

    def within_limits(self, q, margin: float = 0.0) -> bool:
        for qi, (lo, hi) in zip(q, self.joint_limits):
            if qi < lo + margin or qi > hi - margin:
                return False
        return True

    def copy(self) -> "LegModel":
        return LegModel(self.hip_offset.copy(), self.side, self.link_lengths,
                        self.joint_angles.copy(), self.joint_velocities.copy(),
                        self.joint_limits)


def make_legs(rc: RobotConfig) -> list[LegModel]:
    legs = []
    ll = (rc.abduction_offset, rc.thigh_length, rc.calf_length)
    lim = (tuple(rc.hip_roll_limits), tuple(rc.hip_pitch_limits), tuple(rc.knee_limits))
    for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        legs.append(LegModel(np.array([sx * rc.hip_offset_x, sy * rc.hip_offset_y, 0.0]),
                             float(sy), ll, joint_limits=lim))
    return legs


# ---------------------------------------------------------------------------
# leg kinematics (plain float math: this runs 4x per 1 kHz step)


def _fk_local(q1, q2, q3, side, l_abd, lt, lc):
    s2, c2 = math.sin(q2), math.cos(q2)
    s23, c23 = math.sin(q2 + q3), math.cos(q2 + q3)
    wx = -lt * s2 - lc * s23
    wy = side * l_abd
    wz = -lt * c2 - lc * c23
    s1, c1 = math.sin(q1), math.cos(q1)
    return wx, c1 * wy - s1 * wz, s1 * wy + c1 * wz


def _jac_local(q1, q2, q3, side, l_abd, lt, lc):
    s2, c2 = math.sin(q2), math.cos(q2)
    s23, c23 = math.sin(q2 + q3), math.cos(q2 + q3)
    s1, c1 = math.sin(q1), math.cos(q1)
    px, py, pz = _fk_local(q1, q2, q3, side, l_abd, lt, lc)
    dwx2 = -lt * c2 - lc * c23
    dwz2 = lt * s2 + lc * s23
    dwx3 = -lc * c23
    dwz3 = lc * s23
    return np.array([
        [0.0, dwx2, dwx3],
        [-pz, -s1 * dwz2, -s1 * dwz3],
        [py, c1 * dwz2, c1 * dwz3],
    ])


def leg_forward_kinematics(leg: LegModel, trunk: SrbState) -> np.ndarray:
    """World-frame foot position from trunk pose and joint angles."""
    q1, q2, q3 = leg.joint_angles
    local = np.array(_fk_local(q1, q2, q3, leg.side, *leg.link_lengths))
    return trunk.position + trunk.rotation() @ (leg.hip_offset + local)


def leg_jacobian(leg: LegModel, trunk: SrbState) -> np.ndarray:
    """World-frame 3x3 Jacobian d(foot position)/d(joint angles)."""
    q1, q2, q3 = leg.joint_angles
    return trunk.rotation() @ _jac_local(q1, q2, q3, leg.side, *leg.link_lengths)


def leg_jacobian_local(leg: LegModel) -> np.ndarray:
    """Trunk-frame leg Jacobian (no trunk rotation applied)."""
    q1, q2, q3 = leg.joint_angles
    return _jac_local(q1, q2, q3, leg.side, *leg.link_lengths)


@dataclass
class IkResult:
    reachable: bool
    joint_angles: np.ndarray | None
    clamped_target: np.ndarray  # equals the target when reachable


def _ik_local(d, side, l_abd, lt, lc, limits):
    """Closed-form 3-DOF solve in the hip frame, knee-backward branch.

    Returns joint angles or None when the point is outside the workspace or
    joint limits.
    """
    dx, dy, dz = d
    r = math.hypot(dy, dz)
    if r < l_abd + 1e-12:
        return None
    phi = math.atan2(dz, dy)
    alpha = math.acos(min(1.0, max(-1.0, side * l_abd / r)))
    candidates = []
    for q1 in (phi + alpha, phi - alpha):
        q1 = math.atan2(math.sin(q1), math.cos(q1))
        c1, s1 = math.cos(q1), math.sin(q1)
        z_leg = -s1 * dy + c1 * dz  # z in the rolled leg plane
        candidates.append((q1, z_leg))
    candidates.sort(key=lambda c: c[1])  # prefer foot-below branch
    for q1, z_leg in candidates:
        L2 = dx * dx + z_leg * z_leg
        L = math.sqrt(L2)
        if L < 1e-9:
            continue
        D = (L2 - lt * lt - lc * lc) / (2.0 * lt * lc)
        if D > 1.0 + 1e-9 or D < -1.0 - 1e-9:
            continue
        D = min(1.0 - 1e-12, max(-1.0, D))
        q3 = -math.acos(D)
        gamma = math.acos(min(1.0, max(-1.0, (lt * lt + L2 - lc * lc) / (2.0 * lt * L))))
        q2 = math.atan2(-dx, -z_leg) + gamma
        q = (q1, q2, q3)
        if all(lo <= qi <= hi for qi, (lo, hi) in zip(q, limits)):
            return np.array(q)
    return None


def leg_inverse_kinematics(target: np.ndarray, leg: LegModel, trunk: SrbState) -> IkResult:
    """Joint angles reaching the world target, or an unreachable result
    carrying the closest reachable point, clamped along the hip-to-target ray
    onto the geometric reach band of the leg."""
    R = trunk.rotation()
    hip_world = trunk.position + R @ leg.hip_offset
    d = R.T @ (np.asarray(target, dtype=float) - hip_world)
    q = _ik_local(d, leg.side, *leg.link_lengths, leg.joint_limits)
    if q is not None:
        return IkResult(True, q, np.asarray(target, dtype=float).copy())

    l_abd, lt, lc = leg.link_lengths
    r_max = math.hypot(l_abd, lt + lc)
    r_min = math.hypot(l_abd, abs(lt - lc)) + 1e-6
    dist = float(np.linalg.norm(d))
    if dist < 1e-9:
        return IkResult(False, None, hip_world + R @ np.array([0.0, leg.side * l_abd,
                                                               -(lt + lc) * 0.7]))
    scale = min(max(dist, r_min), r_max * (1.0 - 1e-9)) / dist
    return IkResult(False, None, hip_world + R @ (d * scale))


def _solve3(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, bool]:
    """3x3 solve by cofactors; damped least-squares fallback near singularity.

    Returns (x, singular_flag)."""
    a = A
    det = (a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
           - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
           + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]))
    if abs(det) < 1e-6:
        lam = 1e-3
        M = a.T @ a + lam * lam * np.eye(3)
        return np.linalg.solve(M, a.T @ b), True
    inv_det = 1.0 / det
    x0 = (b[0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
          - a[0, 1] * (b[1] * a[2, 2] - a[1, 2] * b[2])
          + a[0, 2] * (b[1] * a[2, 1] - a[1, 1] * b[2])) * inv_det
    x1 = (a[0, 0] * (b[1] * a[2, 2] - a[1, 2] * b[2])
          - b[0] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
          + a[0, 2] * (a[1, 0] * b[2] - b[1] * a[2, 0])) * inv_det
    x2 = (a[0, 0] * (a[1, 1] * b[2] - b[1] * a[2, 1])
          - a[0, 1] * (a[1, 0] * b[2] - b[1] * a[2, 0])
          + b[0] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])) * inv_det
    return np.array([x0, x1, x2]), False


# ---------------------------------------------------------------------------
# shapes and objects


@dataclass(frozen=True)
class Box:
    extents: tuple  # full side lengths (x, y, z)

    def vertices(self) -> np.ndarray:
        hx, hy, hz = (e / 2.0 for e in self.extents)
        return np.array([(sx * hx, sy * hy, sz * hz)
                         for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])

    def signed_distance(self, p) -> tuple[float, np.ndarray]:
        hx, hy, hz = (e / 2.0 for e in self.extents)
        x, y, z = p
        qx, qy, qz = abs(x) - hx, abs(y) - hy, abs(z) - hz
        if qx <= 0.0 and qy <= 0.0 and qz <= 0.0:
            # inside: nearest face
            m = max(qx, qy, qz)
            if m == qx:
                n = np.array([math.copysign(1.0, x), 0.0, 0.0])
            elif m == qy:
                n = np.array([0.0, math.copysign(1.0, y), 0.0])
            else:
                n = np.array([0.0, 0.0, math.copysign(1.0, z)])
            return m, n
        ox, oy, oz = max(qx, 0.0), max(qy, 0.0), max(qz, 0.0)
        dist = math.sqrt(ox * ox + oy * oy + oz * oz)
        n = np.array([math.copysign(ox, x), math.copysign(oy, y), math.copysign(oz, z)]) / dist
        return dist, n

    def sample_surface(self, rng, n: int) -> tuple[np.ndarray, np.ndarray]:
        ex, ey, ez = self.extents
        areas = np.array([ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        u = rng.uniform(-0.5, 0.5, size=n)
        v = rng.uniform(-0.5, 0.5, size=n)
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        half = np.array(self.extents) / 2.0
        for i in range(n):
            a = axis[i]
            b, c = (a + 1) % 3, (a + 2) % 3
            pts[i, a] = sign[i] * half[a]
            pts[i, b] = u[i] * self.extents[b]
            pts[i, c] = v[i] * self.extents[c]
            nrm[i, a] = sign[i]
        return pts, nrm

    def mass_properties(self, density: float) -> tuple[float, np.ndarray]:
        ex, ey, ez = self.extents
        m = density * ex * ey * ez
        I = m / 12.0 * np.diag([ey * ey + ez * ez, ex * ex + ez * ez, ex * ex + ey * ey])
        return m, I


@dataclass(frozen=True)
class Cylinder:
    radius: float
    height: float
    sides: int = 16

    def vertices(self) -> np.ndarray:
        ang = np.linspace(0.0, 2.0 * math.pi, self.sides, endpoint=False)
        ring = np.stack([self.radius * np.cos(ang), self.radius * np.sin(ang)], axis=1)
        top = np.column_stack([ring, np.full(self.sides, self.height / 2.0)])
        bot = np.column_stack([ring, np.full(self.sides, -self.height / 2.0)])
        return np.vstack([top, bot])

    def signed_distance(self, p) -> tuple[float, np.ndarray]:
        x, y, z = p
        rr = math.hypot(x, y)
        dr = rr - self.radius
        dz = abs(z) - self.height / 2.0
        if dr <= 0.0 and dz <= 0.0:
            if dr > dz:
                n = np.array([x / rr, y / rr, 0.0]) if rr > 1e-12 else np.array([1.0, 0.0, 0.0])
                return dr, n
            return dz, np.array([0.0, 0.0, math.copysign(1.0, z)])
        odr, odz = max(dr, 0.0), max(dz, 0.0)
        dist = math.hypot(odr, odz)
        nr = np.array([x / rr, y / rr, 0.0]) if rr > 1e-12 else np.array([1.0, 0.0, 0.0])
        n = (nr * odr + np.array([0.0, 0.0, math.copysign(odz, z)])) / dist
        return dist, n

    def sample_surface(self, rng, n: int) -> tuple[np.ndarray, np.ndarray]:
        side_area = 2.0 * math.pi * self.radius * self.height
        cap_area = math.pi * self.radius ** 2
        total = side_area + 2.0 * cap_area
        region = rng.choice(3, size=n, p=[side_area / total, cap_area / total, cap_area / total])
        pts = np.empty((n, 3))
        nrm = np.empty((n, 3))
        theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
        for i in range(n):
            c, s = math.cos(theta[i]), math.sin(theta[i])
            if region[i] == 0:
                pts[i] = (self.radius * c, self.radius * s,
                          rng.uniform(-self.height / 2.0, self.height / 2.0))
                nrm[i] = (c, s, 0.0)
            else:
                r = self.radius * math.sqrt(rng.uniform())
                zsign = 1.0 if region[i] == 1 else -1.0
                pts[i] = (r * c, r * s, zsign * self.height / 2.0)
                nrm[i] = (0.0, 0.0, zsign)
        return pts, nrm

    def mass_properties(self, density: float) -> tuple[float, np.ndarray]:
        m = density * math.pi * self.radius ** 2 * self.height
        ir = m * (3.0 * self.radius ** 2 + self.height ** 2) / 12.0
        return m, np.diag([ir, ir, m * self.radius ** 2 / 2.0])


@dataclass(frozen=True)
class ConvexMesh:
    """Convex hull of a vertex set; non-vertex points are ignored."""

    points: tuple

    def __post_init__(self):
        from scipy.spatial import ConvexHull
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        hull = ConvexHull(pts)
        object.__setattr__(self, "points", tuple(map(tuple, pts)))
        object.__setattr__(self, "_verts", pts[hull.vertices])
        object.__setattr__(self, "_eqs", hull.equations)  # a.x + b <= 0 inside
        object.__setattr__(self, "_simplices", pts[hull.simplices])

    def vertices(self) -> np.ndarray:
        return self._verts.copy()

    def signed_distance(self, p) -> tuple[float, np.ndarray]:
        # halfspace form: exact inside, face-plane approximation outside
        vals = self._eqs[:, :3] @ np.asarray(p, dtype=float) + self._eqs[:, 3]
        i = int(np.argmax(vals))
        return float(vals[i]), self._eqs[i, :3].copy()

    def sample_surface(self, rng, n: int) -> tuple[np.ndarray, np.ndarray]:
        tri = self._simplices
        ab = tri[:, 1] - tri[:, 0]
        ac = tri[:, 2] - tri[:, 0]
        cross = np.cross(ab, ac)
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        nrms = cross / (2.0 * areas[:, None] + 1e-300)
        # orient outward (centroid is interior for a convex body)
        centroid = self._verts.mean(axis=0)
        flip = np.einsum("ij,ij->i", nrms, tri[:, 0] - centroid) < 0.0
        nrms[flip] *= -1.0
        idx = rng.choice(len(tri), size=n, p=areas / areas.sum())
        u = rng.uniform(size=n)
        v = rng.uniform(size=n)
        swap = u + v > 1.0
        u[swap], v[swap] = 1.0 - u[swap], 1.0 - v[swap]
        pts = tri[idx, 0] + u[:, None] * ab[idx] + v[:, None] * ac[idx]
        return pts, nrms[idx]

    def mass_properties(self, density: float) -> tuple[float, np.ndarray]:
        # tetrahedron decomposition about the centroid
        centroid = self._verts.mean(axis=0)
        m_total = 0.0
        com = np.zeros(3)
        tets = []
        for tri in self._simplices:
            vol = abs(np.dot(tri[0] - centroid, np.cross(tri[1] - centroid, tri[2] - centroid))) / 6.0
            c = (tri[0] + tri[1] + tri[2] + centroid) / 4.0
            m = density * vol
            m_total += m
            com += m * c
            tets.append((m, c, tri))
        com /= m_total
        I = np.zeros((3, 3))
        for m, c, tri in tets:
            # point-mass approximation per tetrahedron, adequate at desk scale
            d = c - com
            I += m * ((d @ d) * np.eye(3) - np.outer(d, d))
            for v in (*tri, centroid):
                d = (v - com) * 0.5
                I += (m / 4.0) * ((d @ d) * np.eye(3) - np.outer(d, d))
        return m_total, I


@dataclass(frozen=True)
class Compound:
    """Union of convex parts at fixed translation offsets (L/T prisms)."""

    parts: tuple  # of (shape, offset 3-tuple)

    def vertices(self) -> np.ndarray:
        vs = [shape.vertices() + np.asarray(off) for shape, off in self.parts]
        return np.vstack(vs)

    def signed_distance(self, p) -> tuple[float, np.ndarray]:
        best = None
        for shape, off in self.parts:
            d, n = shape.signed_distance(np.asarray(p, dtype=float) - np.asarray(off))
            if best is None or d < best[0]:
                best = (d, n)
        return best

    def sample_surface(self, rng, n: int) -> tuple[np.ndarray, np.ndarray]:
        # oversample each part, drop points that fall inside a sibling part
        pts_all, nrm_all = [], []
        for i, (shape, off) in enumerate(self.parts):
            p, nm = shape.sample_surface(rng, n)
            p = p + np.asarray(off)
            keep = np.ones(len(p), dtype=bool)
            for j, (other, ooff) in enumerate(self.parts):
                if i == j:
                    continue
                d = np.array([other.signed_distance(q - np.asarray(ooff))[0] for q in p])
                keep &= d > -1e-9
            pts_all.append(p[keep])
            nrm_all.append(nm[keep])
        pts = np.vstack(pts_all)
        nrm = np.vstack(nrm_all)
        idx = rng.choice(len(pts), size=n, replace=len(pts) < n)
        return pts[idx], nrm[idx]

    def mass_properties(self, density: float) -> tuple[float, np.ndarray]:
        m_total = 0.0
        com = np.zeros(3)
        props = []
        for shape, off in self.parts:
            m, I = shape.mass_properties(density)
            c = np.asarray(off, dtype=float)
            m_total += m
            com += m * c
            props.append((m, I, c))
        com /= m_total
        I_total = np.zeros((3, 3))
        for m, I, c in props:
            d = c - com
            I_total += I + m * ((d @ d) * np.eye(3) - np.outer(d, d))
        return m_total, I_total


@dataclass
class SimObject:
    shape: object
    pose: RigidTransform
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mass: float = 1.0
    inertia: np.ndarray = field(default_factory=lambda: np.eye(3) * 1e-3)
    friction: float = 0.5
    name: str = "object"

    def __post_init__(self):
        self.linear_velocity = np.asarray(self.linear_velocity, dtype=float).reshape(3).copy()
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=float).reshape(3).copy()
        self.inertia = np.asarray(self.inertia, dtype=float).reshape(3, 3)
        if self.mass <= 0.0:
            raise ValueError("mass must be positive")

    @staticmethod
    def from_shape(shape, pose: RigidTransform, density: float = 300.0,
                   friction: float = 0.5, name: str = "object") -> "SimObject":
        m, I = shape.mass_properties(density)
        return SimObject(shape, pose, mass=m, inertia=I, friction=friction, name=name)

    def velocity_at(self, point_world: np.ndarray) -> np.ndarray:
        return self.linear_velocity + _cross(self.angular_velocity,
                                             point_world - self.pose.translation)

    def copy(self) -> "SimObject":
        return SimObject(self.shape, self.pose, self.linear_velocity.copy(),
                         self.angular_velocity.copy(), self.mass,
                         self.inertia.copy(), self.friction, self.name)


def rest_pose_on_ground(shape, xy=(0.0, 0.0), yaw: float = 0.0,
                        contact: ContactConfig | None = None,
                        mass: float | None = None) -> RigidTransform:
    """Pose with the shape resting on z=0, settled to penalty equilibrium when
    the contact parameters and mass are supplied."""
    R = euler_zyx_to_matrix(0.0, 0.0, yaw)
    verts = shape.vertices() @ R.T
    zmin = float(verts[:, 2].min())
    z = -zmin
    if contact is not None and mass is not None:
        n_support = int(np.sum(verts[:, 2] < zmin + 1e-9))
        z -= mass * 9.81 / (contact.k_normal * max(n_support, 1))
    return RigidTransform(R, np.array([xy[0], xy[1], z]))


# ---------------------------------------------------------------------------
# world


@dataclass
class ContactRecord:
    point: np.ndarray
    normal: np.ndarray
    penetration: float
    normal_force: float
    tangential_force: float
    bodies: tuple


@dataclass
class RobotState:
    srb: SrbState
    legs: list
    feet_pos: np.ndarray  # (4, 3) world
    feet_vel: np.ndarray  # (4, 3) world

    def rotation(self) -> np.ndarray:
        return self.srb.rotation()

    def hip_world(self, i: int) -> np.ndarray:
        return self.srb.position + self.rotation() @ self.legs[i].hip_offset

    def copy(self) -> "RobotState":
        return RobotState(self.srb.copy(), [l.copy() for l in self.legs],
                          self.feet_pos.copy(), self.feet_vel.copy())


@dataclass
class WorldState:
    robot: RobotState
    objects: list
    time: float = 0.0
    contact_set: list = field(default_factory=list)
    config: StackConfig = field(default_factory=StackConfig)
    gravity_enabled: bool = True
    ground_enabled: bool = True
    fixed_base: bool = False  # fixture mode: trunk held rigidly in place
    _steps: int = 0

    def copy(self) -> "WorldState":
        w = WorldState(self.robot.copy(), [o.copy() for o in self.objects],
                       self.time, list(self.contact_set), self.config,
                       self.gravity_enabled, self.ground_enabled, self.fixed_base,
                       self._steps)
        return w


def standing_world(config: StackConfig | None = None, height: float | None = None,
                   objects=()) -> WorldState:
    """Robot standing level with feet under the shoulders, touching z=0."""
    config = config or StackConfig()
    rc = config.robot
    h = height if height is not None else config.mpc.stand_height
    legs = make_legs(rc)
    srb = SrbState(np.zeros(3), np.array([0.0, 0.0, h]), np.zeros(3), np.zeros(3),
                   config.sim.gravity)
    feet = np.zeros((4, 3))
    for i, leg in enumerate(legs):
        shoulder = leg.hip_offset + np.array([0.0, leg.side * rc.abduction_offset, 0.0])
        feet[i] = srb.position + shoulder
        feet[i, 2] = rc.foot_radius
    world = WorldState(RobotState(srb, legs, feet, np.zeros((4, 3))), list(objects),
                       config=config)
    _sync_legs(world)
    return world


def _sync_legs(world: WorldState) -> None:
    """Recompute joint angles/velocities from foot points; clamp feet that
    drifted out of the workspace back onto the reachable boundary."""
    robot = world.robot
    srb = robot.srb
    R = srb.rotation()
    mf = world.config.robot.foot_mass
    for i, leg in enumerate(robot.legs):
        hip_world = srb.position + R @ leg.hip_offset
        d = R.T @ (robot.feet_pos[i] - hip_world)
        q = _ik_local(d, leg.side, *leg.link_lengths, leg.joint_limits)
        if q is None:
            # joint stops engaged: freeze the joints and let the foot ride
            # with the trunk this step, with a paired momentum correction
            q1, q2, q3 = leg.joint_angles
            local = np.array(_fk_local(q1, q2, q3, leg.side, *leg.link_lengths))
            p_new = srb.position + R @ (leg.hip_offset + local)
            v_new = srb.linear_velocity + _cross(srb.angular_velocity,
                                                 p_new - srb.position)
            dv = v_new - robot.feet_vel[i]
            srb.linear_velocity -= dv * mf / world.config.robot.trunk_mass
            robot.feet_pos[i] = p_new
            robot.feet_vel[i] = v_new
            leg.joint_velocities[:] = 0.0
            continue
        leg.joint_angles[:] = q
        Jl = _jac_local(q[0], q[1], q[2], leg.side, *leg.link_lengths)
        rel = robot.feet_vel[i] - srb.linear_velocity - _cross(
            srb.angular_velocity, robot.feet_pos[i] - srb.position)
        qd, _ = _solve3(Jl, R.T @ rel)
        leg.joint_velocities[:] = qd


def _normal_force(pen, pen_rate, cc: ContactConfig, m_eff: float, dt: float) -> float:
    """Spring-damper normal force magnitude, clamped nonnegative.

    The damper coefficient is clamped by the effective mass so light bodies
    stay stable under explicit integration at the configured dt."""
    d_eff = min(cc.d_normal, 0.25 * m_eff / dt)
    return cc.k_normal * pen + d_eff * pen_rate


@dataclass
class _FrictionContact:
    # bookkeeping between the normal pass and the impulse pass
    kind: str  # foot_ground | obj_ground | foot_obj
    foot: int
    obj: int
    point: np.ndarray
    normal: np.ndarray
    fn: float
    record: ContactRecord
    applied: float = 0.0  # accumulated impulse magnitude across sweeps


def _tangential_effective_inv_mass(obj: SimObject, I_w_inv, r, t_hat) -> float:
    rx = _cross(r, t_hat)
    return 1.0 / obj.mass + float(rx @ I_w_inv @ rx)


def step(world: WorldState, joint_torques, dt: float | None = None) -> WorldState:
    """Advance the world one step under 12 commanded joint torques (4 legs x 3).

    Normal contact is penalty spring-damper; friction is a per-contact
    tangential impulse capped at mu*fn*dt (Coulomb), applied to the updated
    velocities, which gives true static grip without the stability limits of
    an explicit friction slope. Mutates and returns the same WorldState.
    Raises SimulationDivergence when any velocity exceeds the plausibility
    limit.
    """
    cfg = world.config
    if dt is None:
        dt = cfg.sim.dt
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    tau = np.asarray(joint_torques, dtype=float).reshape(4, 3)
    if not np.all(np.isfinite(tau)):
        raise ValueError("joint torques must be finite")
    robot = world.robot
    srb = robot.srb
    cc = cfg.contact
    rc = cfg.robot
    g = cfg.sim.gravity if world.gravity_enabled else 0.0
    g_vec = np.array([0.0, 0.0, -g])
    R = srb.rotation()

    trunk_force = cfg.robot.trunk_mass * g_vec
    trunk_torque = np.zeros(3)
    feet_force = np.zeros((4, 3))
    contacts: list[ContactRecord] = []
    fric: list[_FrictionContact] = []

    # actuator tip forces (massless legs transmit the reaction to the trunk)
    for i, leg in enumerate(robot.legs):
        q1, q2, q3 = leg.joint_angles
        Jw = R @ _jac_local(q1, q2, q3, leg.side, *leg.link_lengths)
        f_act, _ = _solve3(Jw.T, tau[i])
        feet_force[i] += f_act + rc.foot_mass * g_vec
        trunk_force -= f_act
        trunk_torque -= _cross(robot.feet_pos[i] - srb.position, f_act)

    up = np.array([0.0, 0.0, 1.0])
    if world.ground_enabled:
        for i in range(4):
            pen = rc.foot_radius - robot.feet_pos[i, 2]
            if pen <= 0.0:
                continue
            fn = _normal_force(pen, -robot.feet_vel[i, 2], cc, rc.foot_mass, dt)
            if fn <= 0.0:
                continue
            feet_force[i, 2] += fn
            rec = ContactRecord(robot.feet_pos[i].copy(), up, pen, fn, 0.0,
                                (f"foot_{i}", "ground"))
            contacts.append(rec)
            fric.append(_FrictionContact("foot_ground", i, -1,
                                         robot.feet_pos[i].copy(), up, fn, rec))

    obj_force = [o.mass * g_vec if world.gravity_enabled else np.zeros(3)
                 for o in world.objects]
    obj_torque = [np.zeros(3) for _ in world.objects]

    for oi, obj in enumerate(world.objects):
        Ro, to = obj.pose.rotation, obj.pose.translation
        if world.ground_enabled:
            verts = obj.shape.vertices() @ Ro.T + to
            below = verts[:, 2] < 0.0
            n_sup = max(int(np.sum(below)), 1)
            for v in verts[below]:
                vvel = obj.velocity_at(v)
                fn = _normal_force(-v[2], -vvel[2], cc, obj.mass / n_sup, dt)
                if fn <= 0.0:
                    continue
                obj_force[oi][2] += fn
                obj_torque[oi] += _cross(v - to, fn * up)
                rec = ContactRecord(v.copy(), up, -v[2], fn, 0.0, (obj.name, "ground"))
                contacts.append(rec)
                fric.append(_FrictionContact("obj_ground", -1, oi, v.copy(), up, fn, rec))
        for i in range(4):
            pl = Ro.T @ (robot.feet_pos[i] - to)
            sd, nl = obj.shape.signed_distance(pl)
            pen = rc.foot_radius - sd
            if pen <= 0.0:
                continue
            n = Ro @ nl
            cp = robot.feet_pos[i] - n * sd
            v_rel = robot.feet_vel[i] - obj.velocity_at(cp)
            pen_rate = -float(n @ v_rel)
            m_red = rc.foot_mass * obj.mass / (rc.foot_mass + obj.mass)
            fn = _normal_force(pen, pen_rate, cc, m_red, dt)
            if fn <= 0.0:
                continue
            f = fn * n
            feet_force[i] += f
            obj_force[oi] -= f
            obj_torque[oi] -= _cross(cp - to, f)
            rec = ContactRecord(cp, n, pen, fn, 0.0, (f"foot_{i}", obj.name))
            contacts.append(rec)
            fric.append(_FrictionContact("foot_obj", i, oi, cp, n, fn, rec))

    # velocity integration (positions update after the friction pass)
    if not world.fixed_base:
        I_diag = np.asarray(cfg.robot.trunk_inertia)
        L_trunk = R @ (I_diag * (R.T @ srb.angular_velocity)) + trunk_torque * dt
        srb.linear_velocity += trunk_force / cfg.robot.trunk_mass * dt
    obj_L = []
    obj_I_w_inv = []
    for oi, obj in enumerate(world.objects):
        Ro = obj.pose.rotation
        I_w = Ro @ obj.inertia @ Ro.T
        obj_L.append(I_w @ obj.angular_velocity + obj_torque[oi] * dt)
        obj_I_w_inv.append(np.linalg.inv(I_w))
        obj.linear_velocity += obj_force[oi] / obj.mass * dt
        obj.angular_velocity = obj_I_w_inv[oi] @ obj_L[oi]
    robot.feet_vel += feet_force / rc.foot_mass * dt

    # friction impulses: project tangential relative velocity, Coulomb-capped;
    # two sweeps so corner contacts of one body stop cleanly instead of
    # trading residual momentum; the Coulomb budget is shared across sweeps
    mu_ground = cc.friction
    for c in fric * 2:
        if c.kind == "foot_ground":
            v_rel = robot.feet_vel[c.foot]
            mu = mu_ground
            inv_mass = 1.0 / rc.foot_mass
        elif c.kind == "obj_ground":
            obj = world.objects[c.obj]
            v_rel = obj.velocity_at(c.point)
            mu = min(obj.friction, mu_ground)
            inv_mass = None  # computed against t_hat below
        else:
            obj = world.objects[c.obj]
            v_rel = robot.feet_vel[c.foot] - obj.velocity_at(c.point)
            mu = min(obj.friction, mu_ground)
            inv_mass = None
        v_t = v_rel - (v_rel @ c.normal) * c.normal
        speed = math.sqrt(float(v_t @ v_t))
        if speed < 1e-12:
            continue
        t_hat = v_t / speed
        if c.kind == "foot_ground":
            k = inv_mass
        elif c.kind == "obj_ground":
            obj = world.objects[c.obj]
            k = _tangential_effective_inv_mass(obj, obj_I_w_inv[c.obj],
                                               c.point - obj.pose.translation, t_hat)
        else:
            obj = world.objects[c.obj]
            k = 1.0 / rc.foot_mass + _tangential_effective_inv_mass(
                obj, obj_I_w_inv[c.obj], c.point - obj.pose.translation, t_hat)
        j = min(speed / k, max(mu * c.fn * dt - c.applied, 0.0))
        if j <= 0.0:
            continue
        c.applied += j
        c.record.tangential_force = c.applied / dt
        imp = -j * t_hat
        if c.kind == "foot_ground":
            robot.feet_vel[c.foot] += imp / rc.foot_mass
        elif c.kind == "obj_ground":
            obj = world.objects[c.obj]
            obj.linear_velocity += imp / obj.mass
            obj_L[c.obj] += _cross(c.point - obj.pose.translation, imp)
            obj.angular_velocity = obj_I_w_inv[c.obj] @ obj_L[c.obj]
        else:
            obj = world.objects[c.obj]
            robot.feet_vel[c.foot] += imp / rc.foot_mass
            obj.linear_velocity -= imp / obj.mass
            obj_L[c.obj] -= _cross(c.point - obj.pose.translation, imp)
            obj.angular_velocity = obj_I_w_inv[c.obj] @ obj_L[c.obj]

    # position/orientation integration with post-impulse velocities
    if not world.fixed_base:
        srb.position += srb.linear_velocity * dt
        w_mid = R @ ((R.T @ L_trunk) / I_diag)
        R_new = rotation_exp(w_mid * dt) @ R
        if world._steps % _RENORM_EVERY == 0:
            R_new = orthonormalize(R_new)
        try:
            srb.rpy[:] = matrix_to_euler_zyx(R_new)
        except GimbalLockError as e:
            raise SimulationDivergence(
                f"trunk orientation left the valid envelope: {e}") from e
        srb.angular_velocity[:] = R_new @ ((R_new.T @ L_trunk) / I_diag)

    for oi, obj in enumerate(world.objects):
        Ro = obj.pose.rotation
        new_t = obj.pose.translation + obj.linear_velocity * dt
        w_mid = obj_I_w_inv[oi] @ obj_L[oi]
        Ro_new = rotation_exp(w_mid * dt) @ Ro
        if world._steps % _RENORM_EVERY == 0:
            Ro_new = orthonormalize(Ro_new)
        obj.angular_velocity = Ro_new @ np.linalg.solve(obj.inertia, Ro_new.T @ obj_L[oi])
        obj.pose = RigidTransform(Ro_new, new_t)

    robot.feet_pos += robot.feet_vel * dt

    world._steps += 1
    _sync_legs(world)
    world.contact_set = contacts
    world.time += dt

    vmax = max(float(np.max(np.abs(srb.linear_velocity))),
               float(np.max(np.abs(robot.feet_vel))),
               max((float(np.max(np.abs(o.linear_velocity))) for o in world.objects),
                   default=0.0))
    if vmax > _VEL_LIMIT or not np.isfinite(vmax):
        raise SimulationDivergence(f"velocity {vmax:.1f} m/s exceeds the plausibility limit")
    return world


# ---------------------------------------------------------------------------
# quasi-static push classification (diagnostic)


def quasi_static_push_check(obj: SimObject, contact_point, push_dir,
                            ground_friction: float = 0.5) -> str:
    """Classify the expected planar motion mode of a resting object under a
    point push: 'translate', 'rotate' (about z) or 'tip'.

    Raises ValueError when the contact point is not on the object surface
    (1e-3 m tolerance).
    """
    cp = np.asarray(contact_point, dtype=float)
    d = np.asarray(push_dir, dtype=float)
    Ro, to = obj.pose.rotation, obj.pose.translation
    sd, _ = obj.shape.signed_distance(Ro.T @ (cp - to))
    if abs(sd) > 1e-3:
        raise ValueError(f"contact point is {sd:.4f} m from the object surface")
    d_h = d.copy()
    d_h[2] = 0.0
    if np.linalg.norm(d_h) < 1e-9:
        return "translate"
    d_h /= np.linalg.norm(d_h)

    verts = obj.shape.vertices() @ Ro.T + to
    zmin = verts[:, 2].min()
    support = verts[np.abs(verts[:, 2] - zmin) < 1e-6]
    com_xy = to[:2]

    # tipping about the leading support edge: at the sliding force limit the
    # push moment beats the gravity restoring moment when mu*h > lever
    lever = float(np.max((support[:, :2] - com_xy) @ d_h[:2]))
    h_c = cp[2] - zmin
    mu = min(obj.friction, ground_friction)
    if mu * h_c > lever:
        return "tip"

    # yaw moment: offset of the push line of action from the COM
    r = cp[:2] - com_xy
    e = abs(r[0] * d_h[1] - r[1] * d_h[0])
    extent = float(np.max(np.linalg.norm(support[:, :2] - com_xy, axis=1)))
    return "rotate" if e > 0.25 * extent else "translate"
