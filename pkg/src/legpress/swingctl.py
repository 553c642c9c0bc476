"""Impedance control and swing planning for the manipulation leg.

The torque law is the Cartesian foot-space PD mapped through the transposed
leg Jacobian:

    tau = J^T (Kp (p_des - p_foot) + Kd (v_des - v_foot))

Force modulation during pushing is emergent: the commanded post-contact
displacement may exceed what the object allows, and the tracking error times
Kp is what the foot presses with.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SwingConfig
from .simworld import (
    LegModel,
    SrbState,
    leg_forward_kinematics,
    leg_inverse_kinematics,
    leg_jacobian,
    leg_jacobian_local,
)

WORKSPACE_RADIUS_FACTOR = 0.95


class UnreachableActionError(RuntimeError):
    """Contact point outside the leg workspace even for planning purposes."""


@dataclass
class ImpedanceGains:
    K_p: np.ndarray
    K_d: np.ndarray

    def __post_init__(self):
        self.K_p = np.asarray(self.K_p, dtype=float)
        self.K_d = np.asarray(self.K_d, dtype=float)
        if self.K_p.ndim == 0 or self.K_p.shape == ():
            self.K_p = float(self.K_p) * np.eye(3)
        if self.K_d.ndim == 0 or self.K_d.shape == ():
            self.K_d = float(self.K_d) * np.eye(3)
        for M in (self.K_p, self.K_d):
            if np.max(np.abs(M - M.T)) > 1e-12 or np.any(np.linalg.eigvalsh(M) < -1e-12):
                raise ValueError("gain matrices must be symmetric PSD")

    @staticmethod
    def from_config(cfg: SwingConfig) -> "ImpedanceGains":
        return ImpedanceGains(cfg.kp * np.eye(3), cfg.kd * np.eye(3))


@dataclass
class ImpedanceCommand:
    torques: np.ndarray
    singular: bool = False


def impedance_torque(leg: LegModel, trunk: SrbState, p_des, v_des,
                     gains: ImpedanceGains) -> ImpedanceCommand:
    """Exactly the foot-space PD law; near-singular Jacobians still produce
    torques but are flagged."""
    p_foot = leg_forward_kinematics(leg, trunk)
    J = leg_jacobian(leg, trunk)
    R = trunk.rotation()
    v_foot = (trunk.linear_velocity
              + np.cross(trunk.angular_velocity, p_foot - trunk.position)
              + R @ (leg_jacobian_local(leg) @ leg.joint_velocities))
    f = gains.K_p @ (np.asarray(p_des, dtype=float) - p_foot) \
        + gains.K_d @ (np.asarray(v_des, dtype=float) - v_foot)
    singular = abs(float(np.linalg.det(J))) < 1e-6
    return ImpedanceCommand(J.T @ f, singular)


def impedance_torque_tracking(leg: LegModel, trunk: SrbState, p_foot, v_foot,
                              p_des, v_des, gains: ImpedanceGains) -> ImpedanceCommand:
    """Same law with measured foot state supplied directly (the simulator
    knows the foot point exactly; no joint-velocity reconstruction needed)."""
    J = leg_jacobian(leg, trunk)
    f = gains.K_p @ (np.asarray(p_des, dtype=float) - np.asarray(p_foot, dtype=float)) \
        + gains.K_d @ (np.asarray(v_des, dtype=float) - np.asarray(v_foot, dtype=float))
    singular = abs(float(np.linalg.det(J))) < 1e-6
    return ImpedanceCommand(J.T @ f, singular)


# ---------------------------------------------------------------------------
# workspace


def shoulder_point(leg: LegModel, trunk: SrbState) -> np.ndarray:
    R = trunk.rotation()
    return trunk.position + R @ (leg.hip_offset +
                                 np.array([0.0, leg.side * leg.link_lengths[0], 0.0]))


def workspace_radius(leg: LegModel) -> float:
    return WORKSPACE_RADIUS_FACTOR * (leg.link_lengths[1] + leg.link_lengths[2])


def is_reachable(target, leg: LegModel, trunk: SrbState) -> bool:
    """Conservative reach test: inside the shoulder sphere and IK-solvable
    within joint limits."""
    target = np.asarray(target, dtype=float)
    if np.linalg.norm(target - shoulder_point(leg, trunk)) > workspace_radius(leg):
        return False
    return leg_inverse_kinematics(target, leg, trunk).reachable


def clip_to_workspace(start, target, leg: LegModel, trunk: SrbState) -> np.ndarray:
    """Farthest point on the segment start->target that stays reachable;
    direction from start is preserved exactly."""
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)
    if is_reachable(target, leg, trunk):
        return target.copy()
    lo, hi = 0.0, 1.0
    if not is_reachable(start, leg, trunk):
        return start.copy()
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if is_reachable(start + mid * (target - start), leg, trunk):
            lo = mid
        else:
            hi = mid
    return start + lo * (target - start)


# ---------------------------------------------------------------------------
# swing planning


@dataclass
class Waypoint:
    time: float
    position: np.ndarray
    velocity: np.ndarray
    phase: str  # lift | approach | push | retract


@dataclass
class SwingPlan:
    waypoints: list
    pre_contact_point: np.ndarray
    contact_point: np.ndarray
    push_vector: np.ndarray  # commanded, may exceed reach
    push_endpoint: np.ndarray  # after workspace clipping
    leg_index: int

    @property
    def duration(self) -> float:
        return self.waypoints[-1].time

    def target_at(self, t: float) -> tuple[np.ndarray, np.ndarray, str]:
        """Linear interpolation along the time-stamped waypoints."""
        wps = self.waypoints
        if t <= wps[0].time:
            return wps[0].position.copy(), np.zeros(3), wps[0].phase
        for a, b in zip(wps[:-1], wps[1:]):
            if t <= b.time:
                span = max(b.time - a.time, 1e-9)
                s = (t - a.time) / span
                pos = a.position + s * (b.position - a.position)
                vel = (b.position - a.position) / span
                return pos, vel, b.phase
        return wps[-1].position.copy(), np.zeros(3), wps[-1].phase


class SwingExecutor:
    """Plays a SwingPlan through time and gates the approach-to-push
    transition on actual foot proximity to the contact point."""

    def __init__(self, plan: SwingPlan, cfg: SwingConfig, hold_timeout: float = 0.8):
        self.plan = plan
        self.cfg = cfg
        self.hold_timeout = hold_timeout
        self.t = 0.0
        self._held = 0.0
        # the contact waypoint ends the approach
        self._contact_time = next(w.time for w in plan.waypoints if w.phase == "push")

    @property
    def done(self) -> bool:
        return self.t >= self.plan.duration

    def tick(self, foot_pos, dt: float):
        """Advance and return (p_des, v_des, phase)."""
        gate = (self.t < self._contact_time <= self.t + dt)
        if gate:
            close = float(np.linalg.norm(np.asarray(foot_pos) - self.plan.contact_point)) \
                < self.cfg.approach_threshold
            if not close and self._held < self.hold_timeout:
                self._held += dt
                p, v, phase = self.plan.target_at(self._contact_time - 1e-9)
                return self.plan.contact_point.copy(), np.zeros(3), phase
        self.t += dt
        return self.plan.target_at(self.t)


def _segment_time(a, b, speed) -> float:
    return max(float(np.linalg.norm(b - a)) / max(speed, 1e-6), 0.05)


def plan_swing(contact_point, motion_vector, leg: LegModel, trunk: SrbState,
               cfg: SwingConfig, leg_index: int, foot_start=None) -> SwingPlan:
    """Timed waypoints: lift over, descend to the pre-contact point, close in
    on the contact, push along the motion vector (clipped to the workspace
    with its direction preserved), then retract.

    Raises UnreachableActionError when the contact point itself is outside
    the workspace; the caller is expected to reposition the base first.
    """
    contact = np.asarray(contact_point, dtype=float)
    motion = np.asarray(motion_vector, dtype=float)
    if not is_reachable(contact, leg, trunk):
        raise UnreachableActionError(
            f"contact point {np.round(contact, 3)} outside leg {leg_index} workspace")

    n = float(np.linalg.norm(motion))
    if n < 1e-9:
        direction = np.array([1.0, 0.0, 0.0])
    else:
        direction = motion / n
    pre = contact - cfg.pre_contact_distance * direction
    pre[2] += cfg.lift_clearance
    pre = clip_to_workspace(contact, pre, leg, trunk)

    push_end = clip_to_workspace(contact, contact + motion, leg, trunk)

    start = np.asarray(foot_start, dtype=float) if foot_start is not None \
        else leg_forward_kinematics(leg, trunk)
    apex = 0.5 * (start + pre)
    base_z = apex[2]
    apex[2] = max(start[2], pre[2]) + cfg.lift_clearance
    # the fold limit bounds how high the foot can come; keep the via point valid
    base = apex.copy()
    base[2] = base_z
    apex = clip_to_workspace(base, apex, leg, trunk)

    lift_speed = 2.0 * cfg.push_speed
    wps = [Waypoint(0.0, start.copy(), np.zeros(3), "lift")]
    t = _segment_time(start, apex, lift_speed)
    wps.append(Waypoint(t, apex, np.zeros(3), "lift"))
    t += _segment_time(apex, pre, lift_speed)
    wps.append(Waypoint(t, pre.copy(), np.zeros(3), "approach"))
    t += _segment_time(pre, contact, cfg.push_speed)
    wps.append(Waypoint(t, contact.copy(), np.zeros(3), "approach"))
    t += _segment_time(contact, push_end, cfg.push_speed)
    wps.append(Waypoint(t, push_end.copy(), np.zeros(3), "push"))
    retract = pre.copy()
    t += _segment_time(push_end, retract, lift_speed)
    wps.append(Waypoint(t, retract, np.zeros(3), "retract"))
    return SwingPlan(wps, pre, contact, motion, push_end, leg_index)
