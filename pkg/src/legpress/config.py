"""Stack configuration: dataclass defaults plus a key-value config file loader.

File format is INI (configparser): one section per subsystem, keys matching
the dataclass field names. Vector values are comma-separated. Only keys that
appear in the file override the defaults. The file path can come from the
CLI flag or the LEGPRESS_CONFIG environment variable.

Schema (all values SI):

    [sim]        dt, gravity
    [robot]      trunk_mass, trunk_inertia (3), hip_offset_x, hip_offset_y,
                 abduction_offset, thigh_length, calf_length, foot_mass,
                 foot_radius, hip_roll_limits (2), hip_pitch_limits (2),
                 knee_limits (2)
    [contact]    k_normal, d_normal, friction, regularization_velocity
    [camera]     width, height, horizontal_fov_deg, offset (3), pitch_deg,
                 object_points, background_points
    [mpc]        horizon, dt, state_weights (13), force_weight, friction,
                 f_min, f_max, force_update_period, stand_height
    [swing]      kp, kd, pre_contact_distance, lift_clearance, push_speed,
                 approach_threshold, max_motion_norm
    [gait]       trot_period, trot_duty, raibert_velocity_gain
    [orchestrator] com_shift_factor, com_shift_duration, timeout_com_shift,
                 timeout_manipulation, timeout_walking, standoff_distance
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields

import numpy as np

ENV_CONFIG_VAR = "LEGPRESS_CONFIG"


@dataclass
class SimConfig:
    dt: float = 0.001
    gravity: float = 9.81


@dataclass
class RobotConfig:
    # Go1-like public-spec approximations; never asserted in tests
    trunk_mass: float = 12.0
    trunk_inertia: tuple = (0.07, 0.26, 0.24)
    hip_offset_x: float = 0.19
    hip_offset_y: float = 0.047
    abduction_offset: float = 0.08
    thigh_length: float = 0.213
    calf_length: float = 0.213
    foot_mass: float = 0.1
    foot_radius: float = 0.02
    hip_roll_limits: tuple = (-0.86, 0.86)
    hip_pitch_limits: tuple = (-1.6, 2.4)
    knee_limits: tuple = (-2.7, -0.05)


@dataclass
class ContactConfig:
    k_normal: float = 1e4
    d_normal: float = 100.0
    friction: float = 0.5
    regularization_velocity: float = 1e-3


@dataclass
class CameraConfig:
    width: int = 80
    height: int = 60  # table value 721 treated as typo, see decisions
    horizontal_fov_deg: float = 71.36
    offset: tuple = (0.24, 0.0, 0.14)
    pitch_deg: float = 65.0
    object_points: int = 400
    background_points: int = 400


@dataclass
class MpcConfig:
    horizon: int = 10
    # dt equals force_update_period * sim dt: the hold interval IS the model
    # step, anything shorter destabilizes the sampled-data loop
    dt: float = 0.05
    state_weights: tuple = (0.25, 0.25, 10.0, 50.0, 50.0, 50.0,
                            0.0, 0.0, 0.3, 0.2, 0.2, 0.2, 0.0)
    force_weight: float = 1e-6
    friction: float = 0.4
    f_min: float = 1.0
    f_max: float = 120.0
    force_update_period: int = 50  # sim steps between QP re-solves
    stand_height: float = 0.28


@dataclass
class SwingConfig:
    kp: float = 450.0
    kd: float = 10.0
    pre_contact_distance: float = 0.06
    lift_clearance: float = 0.08
    push_speed: float = 0.25
    approach_threshold: float = 0.01
    max_motion_norm: float = 0.35


@dataclass
class GaitConfig:
    trot_period: float = 0.5
    trot_duty: float = 0.5
    raibert_velocity_gain: float = 0.03


@dataclass
class OrchestratorConfig:
    com_shift_factor: float = 0.7
    com_shift_duration: float = 0.8
    timeout_com_shift: float = 2.0
    timeout_manipulation: float = 5.0
    timeout_walking: float = 15.0
    standoff_distance: float = 0.15


@dataclass
class StackConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    robot: RobotConfig = field(default_factory=RobotConfig)
    contact: ContactConfig = field(default_factory=ContactConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    swing: SwingConfig = field(default_factory=SwingConfig)
    gait: GaitConfig = field(default_factory=GaitConfig)
    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)


def _coerce(raw: str, current):
    if isinstance(current, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(float(v) for v in raw.replace(",", " ").split())
    return raw


def load_config(path: str | None = None) -> StackConfig:
    """Build a StackConfig from defaults, overridden by the file when given.

    With path=None the LEGPRESS_CONFIG environment variable is consulted;
    when that is unset too, pure defaults are returned.
    """
    cfg = StackConfig()
    if path is None:
        path = os.environ.get(ENV_CONFIG_VAR)
    if not path:
        return cfg
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    for section_field in fields(cfg):
        if not parser.has_section(section_field.name):
            continue
        sub = getattr(cfg, section_field.name)
        valid = {f.name for f in fields(sub)}
        for key, raw in parser.items(section_field.name):
            if key not in valid:
                raise KeyError(f"unknown config key [{section_field.name}] {key}")
            setattr(sub, key, _coerce(raw, getattr(sub, key)))
    return cfg


def write_config(cfg: StackConfig, path: str) -> None:
    """Dump every key so a written file round-trips to the same config."""
    parser = configparser.ConfigParser()
    for section_field in fields(cfg):
        sub = getattr(cfg, section_field.name)
        parser.add_section(section_field.name)
        for f in fields(sub):
            v = getattr(sub, f.name)
            if isinstance(v, tuple):
                parser.set(section_field.name, f.name, ", ".join(repr(float(x)) for x in v))
            else:
                parser.set(section_field.name, f.name, repr(v))
    with open(path, "w") as fh:
        parser.write(fh)
