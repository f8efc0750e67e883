"""UAV motion: normalized action scaling, first-order integration, collisions.

Velocity commands are normalized to [-1, 1] and scaled by the kinematic
limits. full3d and forward_rot commands are body-frame; planar2d is
world-frame with the heading frozen; waypoint commands a direction that
an internal rotate-then-advance controller follows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .world import GridWorld

ACTION_VARIANTS = ("full3d", "planar2d", "forward_rot", "waypoint")

_ACTION_DIMS = {"full3d": 3, "planar2d": 2, "forward_rot": 2, "waypoint": 2}

# frames a scaled command can be expressed in
FRAME_BODY = "body"
FRAME_WORLD = "world"
FRAME_DIRECTION = "direction"

WAYPOINT_ALIGN_TOLERANCE = 0.2  # rad; forward motion engages below this error


def action_dim(variant: str) -> int:
    if variant not in _ACTION_DIMS:
        raise ValueError(f"unknown action variant {variant!r}")
    return _ACTION_DIMS[variant]


def wrap_angle(theta: float) -> float:
    """Wrap into (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class KinematicLimits:
    v_max: float = 0.8
    omega_max: float = 3.0
    body_radius: float = 0.08
    dt: float = 0.1
    clamp_velocity_norm: bool = False  # per-axis clamp by default

    def __post_init__(self):
        for name in ("v_max", "omega_max", "body_radius", "dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0

    @property
    def position(self):
        return (self.x, self.y)


@dataclass(frozen=True)
class ActionCommand:
    variant: str
    values: tuple

    @classmethod
    def make(cls, variant: str, values) -> "ActionCommand":
        dim = action_dim(variant)
        vals = np.asarray(values, dtype=float).reshape(-1)
        if vals.shape[0] != dim:
            raise ValueError(f"{variant} expects {dim} components, got {vals.shape[0]}")
        clamped = tuple(float(min(1.0, max(-1.0, v))) for v in vals)
        return cls(variant, clamped)


@dataclass(frozen=True)
class TargetVelocity:
    vx: float
    vy: float
    omega: float
    frame: str


def scale_action(cmd: ActionCommand, limits: KinematicLimits) -> TargetVelocity:
    """Scale a normalized command to physical target velocities."""
    v = cmd.values
    if cmd.variant == "full3d":
        return TargetVelocity(v[0] * limits.v_max, v[1] * limits.v_max, v[2] * limits.omega_max, FRAME_BODY)
    if cmd.variant == "planar2d":
        return TargetVelocity(v[0] * limits.v_max, v[1] * limits.v_max, 0.0, FRAME_WORLD)
    if cmd.variant == "forward_rot":
        return TargetVelocity(v[0] * limits.v_max, 0.0, v[1] * limits.omega_max, FRAME_BODY)
    if cmd.variant == "waypoint":
        return TargetVelocity(v[0], v[1], 0.0, FRAME_DIRECTION)
    raise ValueError(f"unknown action variant {cmd.variant!r}")


_EMPTY = np.empty(0, dtype=float)
_CONTACT_BACKOFF = 1e-9  # m pulled back along the motion at contact


def integrate(
    state: AgentState,
    target: TargetVelocity,
    limits: KinematicLimits,
    world: GridWorld,
    other_positions=None,
):
    """Advance one time step; returns (new_state, collided).

    First-order model: velocities jump to their targets, position moves by
    v*dt, heading by omega*dt. The swept body disc stops at the first
    contact with an occupied cell or another agent's disc.
    """
    dt = limits.dt
    if target.frame == FRAME_DIRECTION:
        dir_x, dir_y = target.vx, target.vy
        norm = math.hypot(dir_x, dir_y)
        if norm < 1e-9:
            omega = 0.0
            body_v = (0.0, 0.0)
        else:
            desired = math.atan2(dir_y, dir_x)
            err = wrap_angle(desired - state.heading)
            omega = math.copysign(min(limits.omega_max, abs(err) / dt), err)
            body_v = (limits.v_max, 0.0) if abs(err) < WAYPOINT_ALIGN_TOLERANCE else (0.0, 0.0)
        heading = wrap_angle(state.heading + omega * dt)
        cos_h, sin_h = math.cos(heading), math.sin(heading)
        world_vx = body_v[0] * cos_h - body_v[1] * sin_h
        world_vy = body_v[0] * sin_h + body_v[1] * cos_h
    else:
        omega = target.omega
        heading = wrap_angle(state.heading + omega * dt)
        if target.frame == FRAME_BODY:
            cos_h, sin_h = math.cos(heading), math.sin(heading)
            world_vx = target.vx * cos_h - target.vy * sin_h
            world_vy = target.vx * sin_h + target.vy * cos_h
        else:
            world_vx = target.vx
            world_vy = target.vy

    if limits.clamp_velocity_norm:
        speed = math.hypot(world_vx, world_vy)
        if speed > limits.v_max:
            scale = limits.v_max / speed
            world_vx *= scale
            world_vy *= scale

    move_x = world_vx * dt
    move_y = world_vy * dt
    if other_positions is not None and len(other_positions) > 0:
        others = np.asarray(other_positions, dtype=float)
        other_xs = np.ascontiguousarray(others[:, 0])
        other_ys = np.ascontiguousarray(others[:, 1])
    else:
        other_xs = _EMPTY
        other_ys = _EMPTY

    t_frac, collided = _kernels.sweep_move(
        world.static_occupancy,
        world.cell_size,
        state.x,
        state.y,
        move_x,
        move_y,
        limits.body_radius,
        other_xs,
        other_ys,
        limits.body_radius,
    )
    if collided:
        move_len = math.hypot(move_x, move_y)
        if move_len > 0.0:
            t_frac = max(0.0, t_frac - _CONTACT_BACKOFF / move_len)
    new_state = AgentState(
        x=state.x + t_frac * move_x,
        y=state.y + t_frac * move_y,
        heading=heading,
        vx=world_vx,
        vy=world_vy,
        omega=omega,
    )
    return new_state, bool(collided)
