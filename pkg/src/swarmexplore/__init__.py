"""Deterministic 2D multi-agent indoor exploration simulator."""

from .env import (
    CurriculumConfig,
    CurriculumState,
    EnvConfig,
    ExplorationEnv,
    Observation,
    StepResult,
    a_max,
    compute_reward,
    curriculum_update,
    make_env,
    observation_layout,
    wrap_paradigm,
)
from .kinematics import ActionCommand, AgentState, KinematicLimits, integrate, scale_action
from .mapping import (
    CellDelta,
    EgocentricMap,
    MapParams,
    OccupancyGrid,
    extract_egocentric,
    fuse_maps,
    known_cells,
    update_from_scan,
)
from .network import CommConfig, CommEvent, CommGraph, MessageLayer, build_graph
from .sensing import LidarConfig, LidarScan, cast_ray, scan
from .world import GridWorld, LevelSpec, build_level, default_level_spec, explorable_area, is_occupied, load_world

__version__ = "0.1.0"
