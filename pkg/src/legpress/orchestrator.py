"""Loco-manipulation state machine and episode runner.

The controller alternates between posture states around each object
interaction: stand and observe, shift the COM into the three-foot support
triangle, execute the swing plan with the manipulation leg under impedance
while the stance legs run force MPC, lower the leg and recover, and walk
(or, in simulation-protocol mode, teleport) whenever the object leaves the
manipulation workspace. Episodes terminate on success (mean goal flow under
the threshold), on the action budget, or on a controller fault.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import StackConfig
from .geom import PointCloud, RigidTransform, compose, rot_z
from .mpc import ForceMpc, GaitSchedule, raibert_foothold, stance_torques
from .policy import GoalSpec, ObjectCentricAction
from .register import register_with_augmentation
from .sensing import (
    CameraModel,
    EmptyObservationError,
    full_scan,
    render_background_cloud,
    render_object_cloud,
)
from .simworld import (
    FRONT_LEFT,
    FRONT_RIGHT,
    SimObject,
    SimulationDivergence,
    WorldState,
    standing_world,
    step as sim_step,
    _sync_legs,
)
from .swingctl import (
    ImpedanceGains,
    SwingExecutor,
    UnreachableActionError,
    impedance_torque_tracking,
    is_reachable,
    plan_swing,
    shoulder_point,
)

TRACE_SCHEMA = "legpress-trace-v1"

QP_STAND = "QP_STAND"
COM_SHIFT = "COM_SHIFT"
MANIPULATION = "MANIPULATION"
POST_ACT_COM_SHIFT = "POST_ACT_COM_SHIFT"
WALKING = "WALKING"

ALLOWED_TRANSITIONS = {
    (QP_STAND, COM_SHIFT),
    (QP_STAND, WALKING),
    (COM_SHIFT, MANIPULATION),
    (MANIPULATION, POST_ACT_COM_SHIFT),
    (POST_ACT_COM_SHIFT, QP_STAND),
    (POST_ACT_COM_SHIFT, WALKING),
    (WALKING, QP_STAND),
    # fault recoveries re-enter the stand state
    (COM_SHIFT, QP_STAND),
    (MANIPULATION, QP_STAND),
}

LEG_INDEX = {"front_left": FRONT_LEFT, "front_right": FRONT_RIGHT}


@dataclass
class StandoffPose:
    position: np.ndarray  # base target, world
    yaw: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)


def reach_check(object_centroid, world: WorldState, leg_name: str = "front_left",
                standoff_distance: float | None = None):
    """'reachable' when the centroid passes the swing workspace test from the
    current base pose; otherwise the standoff pose that puts the object a
    nominal distance ahead of the chosen shoulder."""
    cfg = world.config.orchestrator
    d = standoff_distance if standoff_distance is not None else cfg.standoff_distance
    li = LEG_INDEX[leg_name]
    leg = world.robot.legs[li]
    centroid = np.asarray(object_centroid, dtype=float)
    probe = centroid.copy()
    probe[2] = max(min(probe[2], 0.12), 0.02)  # contact heights live near the ground
    if is_reachable(probe, leg, world.robot.srb):
        return "reachable"
    yaw = world.robot.srb.rpy[2]
    R = rot_z(yaw)
    shoulder_local = leg.hip_offset + np.array([0.0, leg.side * leg.link_lengths[0], 0.0])
    offset = shoulder_local + np.array([d, 0.0, 0.0])
    base = centroid - R @ offset
    base[2] = world.config.mpc.stand_height
    return StandoffPose(base, yaw)


@dataclass
class TaskInstance:
    name: str
    obj: SimObject
    goal_pose: RigidTransform  # absolute world pose of the object at the goal
    seed: int
    success_threshold: float = 0.03
    metric_points: int = 400


@dataclass
class Observation:
    cloud: PointCloud  # camera-visible object points, world frame
    goal: GoalSpec
    obj: SimObject  # shape/pose access for the geometric baselines
    seed: int  # per-call policy seed
    background: PointCloud | None = None


@dataclass
class EpisodeOptions:
    max_steps: int = 7
    reposition: str = "teleport"  # teleport | walk (teleport mirrors the sim protocol)
    pose_source: str = "ground_truth"  # ground_truth | register
    leg: str = "front_left"
    settle_time: float = 0.3
    observe_mode: str = "camera"  # camera | full (full bypasses occlusion)
    record_background: bool = False


@dataclass
class EpisodeTrace:
    task: str
    seed: int
    schema: str = TRACE_SCHEMA
    records: list = field(default_factory=list)
    transitions: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    outcome: str = "incomplete"
    steps_used: int = 0
    final_mean_flow: float = float("nan")

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    def write_jsonl(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"schema": self.schema, "task": self.task,
                                 "seed": self.seed, "outcome": self.outcome,
                                 "steps_used": self.steps_used,
                                 "final_mean_flow": self.final_mean_flow},
                                sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @staticmethod
    def read_jsonl(path: str) -> "EpisodeTrace":
        with open(path) as fh:
            head = json.loads(fh.readline())
            trace = EpisodeTrace(head["task"], head["seed"], head["schema"])
            trace.outcome = head["outcome"]
            trace.steps_used = head["steps_used"]
            trace.final_mean_flow = head["final_mean_flow"]
            for line in fh:
                rec = json.loads(line)
                trace.records.append(rec)
                if rec["type"] == "transition":
                    trace.transitions.append((rec["from"], rec["to"]))
                elif rec["type"] == "action":
                    trace.actions.append(rec)
                elif rec["type"] == "check":
                    trace.rewards.append(rec["reward"])
        return trace


class EpisodeFault(RuntimeError):
    pass


class _OrchestratorCore:
    """Owns the controllers and advances the world one sim step at a time."""

    def __init__(self, world: WorldState, options: EpisodeOptions, rng):
        self.world = world
        self.cfg = world.config
        self.options = options
        self.rng = rng
        self.mpc = ForceMpc(self.cfg.mpc, self.cfg.robot.trunk_mass,
                            np.diag(self.cfg.robot.trunk_inertia))
        self.gains = ImpedanceGains.from_config(self.cfg.swing)
        self.camera = CameraModel.from_config(self.cfg.camera)
        self.state = QP_STAND
        self.state_entry_time = world.time
        self.gait = GaitSchedule.stand()
        self.forces = np.zeros((4, 3))
        self.step_count = 0
        self.command_velocity = np.zeros(2)  # world frame
        self.command_yaw_rate = 0.0
        self.executor: SwingExecutor | None = None
        self.manip_leg = LEG_INDEX[options.leg]
        self.trace: EpisodeTrace | None = None
        self.fault_reason: str | None = None
        self._swing_marks: dict = {}

    # -- state machine plumbing ------------------------------------------

    def transition(self, new_state: str) -> None:
        if new_state == self.state:
            return
        pair = (self.state, new_state)
        if pair not in ALLOWED_TRANSITIONS:
            raise EpisodeFault(f"illegal FSM transition {pair}")
        if self.trace is not None:
            self.trace.records.append({"type": "transition", "t": round(self.world.time, 6),
                                       "from": self.state, "to": new_state})
            self.trace.transitions.append(pair)
        self.state = new_state
        self.state_entry_time = self.world.time

    def time_in_state(self) -> float:
        return self.world.time - self.state_entry_time

    # -- posture helpers ----------------------------------------------------

    def nominal_com_xy(self) -> np.ndarray:
        return self.world.robot.feet_pos[:, :2].mean(axis=0)

    def support_centroid_xy(self, lifted: int) -> np.ndarray:
        idx = [i for i in range(4) if i != lifted]
        return self.world.robot.feet_pos[idx, :2].mean(axis=0)

    def drive_towards(self, target_xy, yaw_target=None, gain=1.5, v_max=0.12):
        e = np.asarray(target_xy) - self.world.robot.srb.position[:2]
        v = gain * e
        n = float(np.linalg.norm(v))
        if n > v_max:
            v *= v_max / n
        self.command_velocity[:] = v
        if yaw_target is not None:
            err = math.atan2(math.sin(yaw_target - self.world.robot.srb.rpy[2]),
                             math.cos(yaw_target - self.world.robot.srb.rpy[2]))
            self.command_yaw_rate = float(np.clip(2.0 * err, -0.6, 0.6))
        else:
            self.command_yaw_rate = 0.0

    def hold_station(self):
        self.command_velocity[:] = 0.0
        self.command_yaw_rate = 0.0

    def nominal_foothold(self, leg_index: int) -> np.ndarray:
        leg = self.world.robot.legs[leg_index]
        p = shoulder_point(leg, self.world.robot.srb)
        return np.array([p[0], p[1], self.cfg.robot.foot_radius])

    # -- low-level tick ----------------------------------------------------

    def control_step(self) -> None:
        world = self.world
        srb = world.robot.srb
        if self.step_count % self.cfg.mpc.force_update_period == 0:
            yaw = srb.rpy[2]
            v_robot = rot_z(yaw).T @ np.array([*self.command_velocity, 0.0])
            command = (self.command_yaw_rate, v_robot[0], v_robot[1],
                       self.cfg.mpc.stand_height)
            res = self.mpc.step(srb, command, world.robot.feet_pos, self.gait, world.time)
            if res.fault:
                raise EpisodeFault("mpc_solver_fault")
            self.forces = res.forces
            if self.trace is not None:
                self.trace.records.append({
                    "type": "tick", "t": round(world.time, 6), "fsm": self.state,
                    "srb": [round(float(v), 6) for v in srb.as_vector()],
                    "objects": [_pose_record(o) for o in world.objects],
                })
        tau = stance_torques(world.robot, self.forces)
        dt = self.cfg.sim.dt

        for i in range(4):
            if self.gait.query(world.time, i):
                continue
            p_des, v_des = self._swing_target(i, dt)
            cmd = impedance_torque_tracking(
                world.robot.legs[i], srb, world.robot.feet_pos[i],
                world.robot.feet_vel[i], p_des, v_des, self.gains)
            tau[i] = cmd.torques

        try:
            sim_step(world, tau.reshape(-1), dt)
        except SimulationDivergence as e:
            raise EpisodeFault(f"simulation_divergence ({e})") from e
        self.step_count += 1

    def run_for(self, duration: float) -> None:
        t_end = self.world.time + duration
        while self.world.time < t_end:
            self.control_step()

    def _swing_target(self, leg_index: int, dt: float):
        if self.state == MANIPULATION and leg_index == self.manip_leg \
                and self.executor is not None:
            p, v, _ = self.executor.tick(self.world.robot.feet_pos[leg_index], dt)
            return p, v
        if self.state == WALKING:
            return self._trot_swing_target(leg_index)
        # POST_ACT and any residual case: settle onto the nominal foothold
        return self.nominal_foothold(leg_index), np.zeros(3)

    def _trot_swing_target(self, leg_index: int):
        gait = self.gait
        t = self.world.time
        phase = gait.swing_phase(t, leg_index)
        leg = self.world.robot.legs[leg_index]
        v_cmd = np.array([*self.command_velocity, 0.0])
        target = raibert_foothold(leg, v_cmd, gait, self.world.robot.srb, self.cfg.gait)
        target[2] = self.cfg.robot.foot_radius
        mark = self._swing_marks.get(leg_index)
        if mark is None or t - mark[0] > gait.period * (1.0 - gait.duty):
            mark = (t, self.world.robot.feet_pos[leg_index].copy())
            self._swing_marks[leg_index] = mark
        start = mark[1]
        pos = start + phase * (target - start)
        pos[2] = self.cfg.robot.foot_radius + 0.04 * math.sin(math.pi * min(phase, 1.0))
        return pos, np.zeros(3)

    # -- repositioning -------------------------------------------------------

    def teleport_to(self, standoff: StandoffPose) -> None:
        """Simulation-protocol reset of the base onto the standoff pose with
        a small pose perturbation, feet re-seated under the shoulders."""
        world = self.world
        jitter_xy = self.rng.uniform(-0.02, 0.02, size=2)
        jitter_yaw = self.rng.uniform(-0.05, 0.05)
        srb = world.robot.srb
        srb.position[:] = standoff.position + np.array([*jitter_xy, 0.0])
        srb.rpy[:] = (0.0, 0.0, standoff.yaw + jitter_yaw)
        srb.linear_velocity[:] = 0.0
        srb.angular_velocity[:] = 0.0
        R = srb.rotation()
        for i, leg in enumerate(world.robot.legs):
            shoulder = leg.hip_offset + np.array([0.0, leg.side * leg.link_lengths[0], 0.0])
            world.robot.feet_pos[i] = srb.position + R @ shoulder
            world.robot.feet_pos[i, 2] = self.cfg.robot.foot_radius
            world.robot.feet_vel[i] = 0.0
        _sync_legs(world)
        self.mpc.solver.reset()
        self.forces[:] = 0.0
        self.step_count = 0

    def walk_to(self, standoff: StandoffPose) -> bool:
        """Trot toward the standoff pose; assumes the FSM is in WALKING.
        Ends back in QP_STAND; returns arrival success."""
        cfg = self.cfg
        self.gait = GaitSchedule.trot(cfg.gait.trot_period, cfg.gait.trot_duty)
        self._swing_marks.clear()
        arrived = False
        while self.time_in_state() < cfg.orchestrator.timeout_walking:
            self.drive_towards(standoff.position[:2], standoff.yaw, gain=1.2, v_max=0.22)
            self.control_step()
            pos_err = float(np.linalg.norm(
                self.world.robot.srb.position[:2] - standoff.position[:2]))
            yaw_err = abs(math.atan2(math.sin(standoff.yaw - self.world.robot.srb.rpy[2]),
                                     math.cos(standoff.yaw - self.world.robot.srb.rpy[2])))
            if pos_err < 0.03 and yaw_err < 0.1:
                arrived = True
                break
        self.gait = GaitSchedule.stand()
        self.hold_station()
        self.transition(QP_STAND)
        self.run_for(self.options.settle_time)
        return arrived


def _pose_record(obj: SimObject):
    return {"t": [round(float(v), 6) for v in obj.pose.translation],
            "R": [round(float(v), 9) for v in obj.pose.rotation.reshape(-1)]}


def observe_object(core: _OrchestratorCore, object_index: int, seed: int) -> PointCloud:
    if core.options.observe_mode == "full":
        return full_scan(core.world.objects[object_index],
                         core.cfg.camera.object_points, seed)
    return render_object_cloud(core.world, core.camera, object_index,
                               core.cfg.camera.object_points, seed)


def estimate_relative_goal(core: _OrchestratorCore, task: TaskInstance,
                           observed: PointCloud, seed: int) -> RigidTransform:
    """Transform from the current object pose to the goal pose."""
    obj = core.world.objects[0]
    if core.options.pose_source == "register":
        target_obj = SimObject(obj.shape, task.goal_pose, mass=obj.mass,
                               inertia=obj.inertia)
        target = full_scan(target_obj, max(len(observed), 400), seed + 17)
        result = register_with_augmentation(observed, target, seed=seed + 31)
        return result.transform
    return compose(task.goal_pose, obj.pose.inverse())


def metric_mean_flow(task: TaskInstance, obj: SimObject, local_cloud: np.ndarray) -> float:
    current = local_cloud @ obj.pose.rotation.T + obj.pose.translation
    goal = local_cloud @ task.goal_pose.rotation.T + task.goal_pose.translation
    return float(np.mean(np.linalg.norm(goal - current, axis=1)))


def run_episode(task: TaskInstance, policy_provider, options: EpisodeOptions | None = None,
                config: StackConfig | None = None, seed: int | None = None) -> EpisodeTrace:
    """Closed-loop episode: observe, act through the FSM, repeat until the
    goal flow drops under the threshold or the budget is exhausted.

    Faults (timeouts, divergence, empty observations) end the episode with a
    fault outcome; they never raise out of the harness.
    """
    options = options or EpisodeOptions()
    config = config or StackConfig()
    seed = task.seed if seed is None else seed
    rng = np.random.default_rng(seed)

    world = standing_world(config, objects=[task.obj.copy()])
    obj = world.objects[0]
    core = _OrchestratorCore(world, options, rng)
    trace = EpisodeTrace(task.name, seed)
    core.trace = trace

    metric_rng = np.random.default_rng(seed ^ 0x5EED)
    local_pts, _ = obj.shape.sample_surface(metric_rng, task.metric_points)

    def check_success() -> float:
        mean = metric_mean_flow(task, obj, local_pts)
        trace.records.append({"type": "check", "t": round(world.time, 6),
                              "mean_flow": round(mean, 9), "reward": round(-mean, 9)})
        trace.rewards.append(round(-mean, 9))
        return mean

    def finish(outcome: str, mean: float | None = None) -> EpisodeTrace:
        trace.outcome = outcome
        trace.final_mean_flow = mean if mean is not None else \
            metric_mean_flow(task, obj, local_pts)
        return trace

    standoff = reach_check(obj.pose.translation, world, options.leg)
    if isinstance(standoff, StandoffPose):
        core.teleport_to(standoff)  # initial placement mirrors the eval protocol

    try:
        core.run_for(options.settle_time)
        mean = check_success()
        if mean < task.success_threshold:
            return finish("success", mean)

        while trace.steps_used < options.max_steps:
            reach = reach_check(obj.pose.translation, world, options.leg)
            if isinstance(reach, StandoffPose):
                if options.reposition == "teleport":
                    core.teleport_to(reach)
                    core.run_for(options.settle_time)
                else:
                    core.transition(WALKING)
                    if not core.walk_to(reach):
                        return finish("fault:walking_timeout", check_success())
                continue  # re-run the reach check from the new base

            obs_seed = int(rng.integers(2 ** 31))
            try:
                observed = observe_object(core, 0, obs_seed)
            except EmptyObservationError:
                return finish("fault:empty_observation", check_success())

            rel = estimate_relative_goal(core, task, observed, obs_seed)
            goal = GoalSpec.from_cloud(rel, observed)
            background = None
            if options.record_background:
                background = render_background_cloud(world, core.camera,
                                                     config.camera.background_points,
                                                     obs_seed + 1)
            obs = Observation(observed, goal, obj, int(rng.integers(2 ** 31)), background)
            action = policy_provider(obs)
            trace.steps_used += 1
            if action is None:
                return finish("fault:no_action", check_success())
            if isinstance(action, str) and action == "oracle_teleport":
                obj.pose = task.goal_pose  # debug upper bound
                obj.linear_velocity[:] = 0.0
                obj.angular_velocity[:] = 0.0
                mean = check_success()
                return finish("success" if mean < task.success_threshold else "max_steps",
                              mean)

            rec = {"type": "action", "t": round(world.time, 6), "step": trace.steps_used,
                   "contact_index": int(action.contact_index),
                   "motion": [round(float(v), 6) for v in action.motion_params],
                   "leg": action.leg}
            trace.actions.append(rec)
            trace.records.append(rec)

            _execute_action(core, observed, action, config)

            mean = check_success()
            if mean < task.success_threshold:
                return finish("success", mean)

        return finish("max_steps", check_success())
    except EpisodeFault as e:
        return finish(f"fault:{e}")


def _execute_action(core: _OrchestratorCore, observed: PointCloud,
                    action: ObjectCentricAction, config: StackConfig) -> None:
    """COM shift, swing execution and recovery for one action.

    An unreachable contact skips the physical attempt (the main loop's reach
    check then repositions the base); hard failures raise EpisodeFault."""
    world = core.world
    ocfg = config.orchestrator
    leg_index = LEG_INDEX[action.leg]
    core.manip_leg = leg_index
    contact = observed.points[action.contact_index]
    motion = action.motion_params.copy()
    max_norm = config.swing.max_motion_norm
    n = float(np.linalg.norm(motion))
    if n > max_norm:
        motion *= max_norm / n

    leg = world.robot.legs[leg_index]
    try:
        plan = plan_swing(contact, motion, leg, world.robot.srb, config.swing,
                          leg_index, foot_start=world.robot.feet_pos[leg_index])
    except UnreachableActionError:
        core.fault_reason = "unreachable_contact"
        return

    # COM shift into the remaining support triangle
    core.transition(COM_SHIFT)
    com0 = core.nominal_com_xy()
    tri = core.support_centroid_xy(leg_index)
    com_target = com0 + ocfg.com_shift_factor * (tri - com0)
    while core.time_in_state() < ocfg.com_shift_duration:
        core.drive_towards(com_target, None, gain=2.0, v_max=0.08)
        core.control_step()
        if core.time_in_state() > ocfg.timeout_com_shift:
            raise EpisodeFault("com_shift_timeout")

    # lift the leg and run the swing plan
    core.gait = GaitSchedule.stand(lifted=(leg_index,))
    core.executor = SwingExecutor(plan, config.swing)
    core.transition(MANIPULATION)
    while not core.executor.done:
        core.drive_towards(com_target, None, gain=2.0, v_max=0.08)
        core.control_step()
        if core.time_in_state() > ocfg.timeout_manipulation:
            raise EpisodeFault("manipulation_timeout")
    core.executor = None

    # lower the leg and restore the stance
    core.transition(POST_ACT_COM_SHIFT)
    nominal = core.nominal_foothold(leg_index)
    t0 = world.time
    while world.time - t0 < 2.0 * ocfg.com_shift_duration:
        core.drive_towards(core.nominal_com_xy(), None, gain=2.0, v_max=0.08)
        core.control_step()
        if world.time - t0 > 0.3 \
                and np.linalg.norm(world.robot.feet_pos[leg_index] - nominal) < 0.02:
            break
    core.gait = GaitSchedule.stand()
    core.hold_station()
    core.transition(QP_STAND)
    core.run_for(0.3)
