"""Episode loop for the shared-reward exploration task.

Fixed step phase order: (1) integrate all agents from the same pre-step
snapshot, (2) scan, (3) network tick, (4) apply self scans then delivered
events to beliefs, (5) shared reward from the team-level newly known
area, (6) termination. All agents receive the identical scalar reward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import mapping, network, sensing, world as world_mod
from .kinematics import (
    ActionCommand,
    AgentState,
    KinematicLimits,
    action_dim,
    integrate,
    scale_action,
)
from .mapping import MapParams, OccupancyGrid
from .network import CommConfig, MessageLayer, build_graph
from .sensing import LidarConfig

PARADIGMS = ("ctce", "ctde", "dtde")
OBS_VARIANTS = ("ego_map", "lidar", "pose_velocity", "inter_agent_distances")


@dataclass(frozen=True)
class CurriculumConfig:
    mode: str = "sequential"  # sequential | parallel
    pass_area: float = 0.8
    pass_x_times: int = 20
    level_order: tuple = tuple(range(world_mod.N_LEVELS))

    def __post_init__(self):
        if self.mode not in ("sequential", "parallel"):
            raise ValueError("curriculum mode must be sequential or parallel")
        if not 0.0 < self.pass_area <= 1.0:
            raise ValueError("pass_area must be in (0, 1]")
        if self.pass_x_times < 1:
            raise ValueError("pass_x_times must be >= 1")


@dataclass(frozen=True)
class CurriculumState:
    level_index: int = 0
    pass_counter: int = 0


def curriculum_update(config: CurriculumConfig, state: CurriculumState, coverage: float):
    """Gate on episode coverage; returns (new_state, advanced)."""
    if coverage >= config.pass_area:
        counter = state.pass_counter + 1
    else:
        counter = state.pass_counter
    if counter >= config.pass_x_times:
        next_index = min(state.level_index + 1, len(config.level_order) - 1)
        return CurriculumState(level_index=next_index, pass_counter=0), True
    return CurriculumState(level_index=state.level_index, pass_counter=counter), False


@dataclass(frozen=True)
class EnvConfig:
    n_agents: int = 1
    level_id: int = 0
    level_spec: world_mod.LevelSpec = None
    paradigm: str = "dtde"
    episode_steps: int = 1000
    action_variant: str = "full3d"
    observation_variant: tuple = ("ego_map", "lidar", "pose_velocity")
    ego_window: int = 64
    W_area: float = 1.0
    W_collision: float = 0.0
    R_collision: float = -1.0
    kill_on_collision: bool = False
    normalize_by_team: bool = False
    cell_size: float = world_mod.DEFAULT_CELL_SIZE
    limits: KinematicLimits = field(default_factory=KinematicLimits)
    comm: CommConfig = field(default_factory=CommConfig)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    map_params: MapParams = field(default_factory=MapParams)
    curriculum: CurriculumConfig = None
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_agents <= 4:
            raise ValueError("n_agents must be between 1 and 4")
        if self.episode_steps < 1:
            raise ValueError("episode_steps must be >= 1")
        if self.paradigm not in PARADIGMS:
            raise ValueError(f"paradigm must be one of {PARADIGMS}")
        action_dim(self.action_variant)
        if not self.observation_variant:
            raise ValueError("observation_variant must not be empty")
        for name in self.observation_variant:
            if name not in OBS_VARIANTS:
                raise ValueError(f"unknown observation variant {name!r}")

    @property
    def dt(self) -> float:
        return self.limits.dt


def a_max(config: EnvConfig) -> float:
    """Theoretical maximum newly swept area per agent per step (m^2)."""
    return 2.0 * config.lidar.max_range * config.limits.v_max * config.limits.dt


def compute_reward(known_before: int, known_after: int, collisions: int, config: EnvConfig) -> float:
    cell_area = config.cell_size * config.cell_size
    delta_area = (known_after - known_before) * cell_area / a_max(config)
    if config.normalize_by_team:
        delta_area /= config.n_agents
    return config.W_area * delta_area + config.W_collision * config.R_collision * collisions


@dataclass
class Observation:
    ego_map: np.ndarray = None
    lidar: np.ndarray = None
    pose: np.ndarray = None
    velocities: np.ndarray = None
    distances: np.ndarray = None

    def flat(self) -> np.ndarray:
        parts = []
        if self.ego_map is not None:
            parts.append(self.ego_map.reshape(-1))
        if self.lidar is not None:
            parts.append(self.lidar)
        if self.pose is not None:
            parts.append(self.pose)
        if self.velocities is not None:
            parts.append(self.velocities)
        if self.distances is not None:
            parts.append(self.distances)
        return np.concatenate(parts)


def observation_layout(config: EnvConfig):
    """Ordered (name, size) segments of one agent's flattened observation."""
    segments = []
    if "ego_map" in config.observation_variant:
        segments.append(("ego_map", config.ego_window * config.ego_window))
    if "lidar" in config.observation_variant:
        segments.append(("lidar", config.lidar.ray_count))
    if "pose_velocity" in config.observation_variant:
        segments.append(("pose", 3))
        segments.append(("velocities", 3))
    if "inter_agent_distances" in config.observation_variant:
        segments.append(("distances", config.n_agents - 1))
    return segments


@dataclass
class StepResult:
    observations: object  # list per agent, or one concatenated array for ctce
    reward: float
    terminated: bool
    truncated: bool
    info: dict


class ParadigmAdapter:
    """Shapes per-agent observations/actions to the configured paradigm."""

    def __init__(self, config: EnvConfig):
        self.paradigm = config.paradigm
        self.n_agents = config.n_agents
        self.action_dim = action_dim(config.action_variant)

    def shape_observations(self, obs_list):
        if self.paradigm == "ctce":
            return np.concatenate([o.flat() for o in obs_list])
        return obs_list

    def split_action(self, joint_action):
        if self.paradigm == "ctce":
            arr = np.asarray(joint_action, dtype=float).reshape(-1)
            expected = self.n_agents * self.action_dim
            if arr.shape[0] != expected:
                raise ValueError(f"ctce expects a joint action of length {expected}")
            return [arr[i * self.action_dim : (i + 1) * self.action_dim] for i in range(self.n_agents)]
        actions = list(joint_action)
        if len(actions) != self.n_agents:
            raise ValueError(f"expected {self.n_agents} actions, got {len(actions)}")
        return [np.asarray(a, dtype=float).reshape(-1) for a in actions]

    @property
    def wants_global_state(self) -> bool:
        return self.paradigm == "ctde"


def wrap_paradigm(config: EnvConfig) -> ParadigmAdapter:
    return ParadigmAdapter(config)


class ExplorationEnv:
    def __init__(self, config: EnvConfig, world=None):
        self.config = config
        self.adapter = wrap_paradigm(config)
        self._world_cache = {}
        self._world_override = world
        self.curriculum_state = CurriculumState()
        self.world = None
        self._done = True
        self._t = 0

    # ------------------------------------------------------------ setup
    def _level_for_episode(self, rng):
        cur = self.config.curriculum
        if cur is None:
            return self.config.level_id
        if cur.mode == "sequential":
            return cur.level_order[min(self.curriculum_state.level_index, len(cur.level_order) - 1)]
        return cur.level_order[int(rng.integers(len(cur.level_order)))]

    def _build_world(self, level_id):
        if self._world_override is not None:
            return self._world_override
        if self.config.level_spec is not None:
            key = ("spec", id(self.config.level_spec))
            if key not in self._world_cache:
                self._world_cache[key] = world_mod.build_level(
                    self.config.level_spec, cell_size=self.config.cell_size
                )
            return self._world_cache[key]
        if level_id not in self._world_cache:
            spec = world_mod.default_level_spec(level_id)
            self._world_cache[level_id] = world_mod.build_level(spec, cell_size=self.config.cell_size)
        return self._world_cache[level_id]

    def reset(self, episode_seed=None):
        cfg = self.config
        seed = cfg.seed if episode_seed is None else int(episode_seed)
        rng = np.random.default_rng(seed)
        self.world = self._build_world(self._level_for_episode(rng))
        if cfg.n_agents > len(self.world.spawn_points):
            raise ValueError(
                f"{cfg.n_agents} agents but only {len(self.world.spawn_points)} spawn points"
            )
        headings = rng.uniform(-math.pi, math.pi, cfg.n_agents)
        self.agents = [
            AgentState(x=sx, y=sy, heading=float(h))
            for (sx, sy), h in zip(self.world.spawn_points[: cfg.n_agents], headings)
        ]
        self.grids = [OccupancyGrid.for_world(self.world, cfg.map_params) for _ in range(cfg.n_agents)]
        self._team_sum = np.zeros(
            (self.world.height_cells, self.world.width_cells), dtype=np.float64
        )
        self._explorable = self.world.reachable_free
        self._team_known = 0
        self._coverage_known = 0
        self._monotone = True
        self._cells_self = 0
        self._cells_collab = 0
        self._collisions_total = 0
        self._reward_sum = 0.0
        self._t = 0
        self._done = False
        self.layer = MessageLayer(config=cfg.comm, n_agents=cfg.n_agents, dt=cfg.limits.dt)

        self._scans = []
        for i, state in enumerate(self.agents):
            others = [a.position for j, a in enumerate(self.agents) if j != i]
            self._scans.append(
                sensing.scan(self.world, state, cfg.lidar, others, cfg.limits.body_radius)
            )
        for i, state in enumerate(self.agents):
            delta = mapping.update_from_scan(self.grids[i], state, self._scans[i])
            self._cells_self += delta.discovered_count
            self._apply_team_delta(delta)
        self._known_baseline = self._team_known
        obs_list = self._build_observations()
        self._update_info(reward=0.0, collisions_step=0)
        return self.adapter.shape_observations(obs_list)

    # ------------------------------------------------------------ stepping
    def step(self, joint_action) -> StepResult:
        if self._done:
            raise RuntimeError("episode is finished; call reset() first")
        cfg = self.config
        actions = self.adapter.split_action(joint_action)

        snapshot = [a.position for a in self.agents]
        collided_flags = []
        for i in range(cfg.n_agents):
            cmd = ActionCommand.make(cfg.action_variant, actions[i])
            target = scale_action(cmd, cfg.limits)
            others = [p for j, p in enumerate(snapshot) if j != i]
            new_state, collided = integrate(self.agents[i], target, cfg.limits, self.world, others)
            self.agents[i] = new_state
            collided_flags.append(collided)
        collisions_step = sum(collided_flags)
        self._collisions_total += collisions_step

        self._scans = []
        for i, state in enumerate(self.agents):
            others = [a.position for j, a in enumerate(self.agents) if j != i]
            self._scans.append(
                sensing.scan(self.world, state, cfg.lidar, others, cfg.limits.body_radius)
            )

        graph = build_graph([a.position for a in self.agents], cfg.comm, step=self._t)
        payloads = [network.encode_lidar_payload(s, self._t) for s in self._scans]
        delivered = self.layer.tick(
            self._t, graph, payloads, lambda i: mapping.serialize_grid(self.grids[i])
        )

        for i, state in enumerate(self.agents):
            delta = mapping.update_from_scan(self.grids[i], state, self._scans[i])
            self._cells_self += delta.discovered_count
            self._apply_team_delta(delta)
        for ev in delivered:
            grid = self.grids[ev.receiver]
            if ev.kind == network.KIND_LIDAR:
                shared = network.decode_lidar_payload(
                    ev.payload, cfg.lidar.field_of_view, cfg.lidar.max_range
                )
                delta = mapping.update_from_scan(grid, None, shared)
            else:
                incoming = mapping.deserialize_grid(ev.payload, params=grid.params)
                delta = mapping.fuse_into(grid, incoming)
            self._cells_collab += delta.discovered_count
            self._apply_team_delta(delta)

        known_after = self._team_known
        reward = compute_reward(self._known_baseline, known_after, collisions_step, cfg)
        self._known_baseline = known_after
        self._reward_sum += reward

        terminated = bool(cfg.kill_on_collision and collisions_step > 0)
        self._t += 1
        truncated = self._t >= cfg.episode_steps
        if terminated or truncated:
            self._done = True
            if cfg.curriculum is not None and cfg.curriculum.mode == "sequential":
                self.curriculum_state, _ = curriculum_update(
                    cfg.curriculum, self.curriculum_state, self.coverage
                )

        obs_list = self._build_observations()
        info = self._update_info(reward=reward, collisions_step=collisions_step)
        return StepResult(
            observations=self.adapter.shape_observations(obs_list),
            reward=reward,
            terminated=terminated,
            truncated=truncated,
            info=info,
        )

    # ------------------------------------------------------------ internals
    def _apply_team_delta(self, delta: mapping.CellDelta):
        if len(delta) == 0:
            return
        eps = self.config.map_params.epsilon
        flat_idx = delta.cells_iy * self.world.width_cells + delta.cells_ix
        team_flat = self._team_sum.reshape(-1)
        old_team = team_flat[flat_idx]
        new_team = old_team + (delta.new_log_odds - delta.old_log_odds)
        team_flat[flat_idx] = new_team
        old_known = np.abs(old_team) > eps
        new_known = np.abs(new_team) > eps
        up = new_known & ~old_known
        down = old_known & ~new_known
        n_up = int(np.count_nonzero(up))
        n_down = int(np.count_nonzero(down))
        self._team_known += n_up - n_down
        if n_down:
            self._monotone = False
        mask = self._explorable.reshape(-1)[flat_idx]
        self._coverage_known += int(np.count_nonzero(up & mask)) - int(
            np.count_nonzero(down & mask)
        )

    @property
    def coverage(self) -> float:
        return self._coverage_known / self.world.explorable_cell_count

    def team_known_cells(self) -> int:
        return self._team_known

    def _build_observations(self):
        cfg = self.config
        variants = cfg.observation_variant
        obs = []
        positions = [a.position for a in self.agents]
        for i, state in enumerate(self.agents):
            o = Observation()
            if "ego_map" in variants:
                o.ego_map = mapping.extract_egocentric(self.grids[i], state, cfg.ego_window).window
            if "lidar" in variants:
                o.lidar = self._scans[i].ranges.copy()
            if "pose_velocity" in variants:
                o.pose = np.array([state.x, state.y, state.heading])
                o.velocities = np.array([state.vx, state.vy, state.omega])
            if "inter_agent_distances" in variants:
                o.distances = np.array(
                    [
                        math.hypot(state.x - positions[j][0], state.y - positions[j][1])
                        for j in range(cfg.n_agents)
                        if j != i
                    ]
                )
            obs.append(o)
        return obs

    def global_state(self) -> np.ndarray:
        """Critic-only channel for ctde: all poses, velocities, team coverage."""
        parts = []
        for a in self.agents:
            parts.append([a.x, a.y, a.heading, a.vx, a.vy, a.omega])
        return np.concatenate([np.array(parts).reshape(-1), [self.coverage]])

    def _update_info(self, reward: float, collisions_step: int) -> dict:
        info = {
            "step": self._t,
            "coverage": self.coverage,
            "known_cells": self._team_known,
            "cells_self": self._cells_self,
            "cells_collab": self._cells_collab,
            "bytes_lidar": self.layer.bytes_sent[network.KIND_LIDAR],
            "bytes_map": self.layer.bytes_sent[network.KIND_MAP],
            "events_dropped": self.layer.events_dropped,
            "collisions": self._collisions_total,
            "collisions_step": collisions_step,
            "monotone": self._monotone,
            "level_id": self.world.level_id,
            "reward": reward,
            "reward_sum": self._reward_sum,
            "curriculum_level_index": self.curriculum_state.level_index,
            "curriculum_counter": self.curriculum_state.pass_counter,
        }
        if self.adapter.wants_global_state:
            info["global_state"] = self.global_state()
        self.last_info = info
        return info


def make_env(config: EnvConfig) -> ExplorationEnv:
    return ExplorationEnv(config)
