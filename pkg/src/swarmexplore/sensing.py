"""Simulated 2D LiDAR against the static grid and agent body discs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .kinematics import AgentState
from .world import GridWorld

_EMPTY = np.empty(0, dtype=float)


@dataclass(frozen=True)
class LidarConfig:
    ray_count: int = 36
    field_of_view: float = 2.0 * math.pi
    max_range: float = 5.0

    def __post_init__(self):
        if self.ray_count < 1:
            raise ValueError("ray_count must be >= 1")
        if not 0.0 < self.field_of_view <= 2.0 * math.pi + 1e-12:
            raise ValueError("field_of_view must be in (0, 2*pi]")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")

    def ray_angles(self, heading: float) -> np.ndarray:
        k = np.arange(self.ray_count, dtype=float)
        return heading + self.field_of_view * (k / self.ray_count - 0.5)


@dataclass
class LidarScan:
    origin: tuple
    origin_heading: float
    ranges: np.ndarray
    hit_flags: np.ndarray
    field_of_view: float
    max_range: float

    def angles(self) -> np.ndarray:
        n = self.ranges.shape[0]
        k = np.arange(n, dtype=float)
        return self.origin_heading + self.field_of_view * (k / n - 0.5)


def cast_ray(
    world: GridWorld,
    origin,
    angle: float,
    max_range: float,
    agent_positions=None,
    agent_radius: float = 0.0,
):
    """Distance to the first occupied-cell boundary or agent disc along a ray."""
    if agent_positions is not None and len(agent_positions) > 0:
        pts = np.asarray(agent_positions, dtype=float)
        xs = np.ascontiguousarray(pts[:, 0])
        ys = np.ascontiguousarray(pts[:, 1])
    else:
        xs = _EMPTY
        ys = _EMPTY
    ranges = np.empty(1, dtype=float)
    hits = np.empty(1, dtype=np.uint8)
    _kernels.cast_rays(
        world.static_occupancy,
        world.cell_size,
        float(origin[0]),
        float(origin[1]),
        np.array([angle], dtype=float),
        float(max_range),
        xs,
        ys,
        float(agent_radius),
        ranges,
        hits,
    )
    return float(ranges[0]), bool(hits[0])


def scan(
    world: GridWorld,
    self_state: AgentState,
    config: LidarConfig,
    other_positions=None,
    agent_radius: float = 0.0,
) -> LidarScan:
    """Full sweep of config.ray_count rays centered on the agent heading."""
    if other_positions is not None and len(other_positions) > 0:
        pts = np.asarray(other_positions, dtype=float)
        xs = np.ascontiguousarray(pts[:, 0])
        ys = np.ascontiguousarray(pts[:, 1])
    else:
        xs = _EMPTY
        ys = _EMPTY
    angles = config.ray_angles(self_state.heading)
    ranges = np.empty(config.ray_count, dtype=float)
    hits = np.empty(config.ray_count, dtype=np.uint8)
    _kernels.cast_rays(
        world.static_occupancy,
        world.cell_size,
        self_state.x,
        self_state.y,
        angles,
        config.max_range,
        xs,
        ys,
        float(agent_radius),
        ranges,
        hits,
    )
    return LidarScan(
        origin=(self_state.x, self_state.y),
        origin_heading=self_state.heading,
        ranges=ranges,
        hit_flags=hits.astype(bool),
        field_of_view=config.field_of_view,
        max_range=config.max_range,
    )
