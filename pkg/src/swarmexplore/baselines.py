"""Scripted policies: environment-correctness oracles, not contributions.

All policies act on a single agent's local observation plus their own
internal state, so they run under any execution paradigm.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from . import _kernels
from .env import EnvConfig, Observation
from .kinematics import action_dim
from .mapping import probability

POLICY_KINDS = ("stationary", "random_walk", "frontier_greedy")

_RANDOM_HEADING_HOLD = 30  # steps a wander heading persists without a frontier
_ESCAPE_HOLD = 8  # steps a post-collision heading is immune to preemption
_TRAP_ESCAPE_HOLD = 20  # longer escape when progress has stalled
_TRAP_WINDOW = 30  # steps of position history for the trap detector
_TRAP_EXTENT = 0.3  # m; staying inside a box this small means trapped
_TARGET_COMMIT_STEPS = 40  # steps a chosen frontier target stays committed
_FRONTIER_MIN_MASS = 18  # unknown cells near a frontier worth traveling for
_STUCK_FRACTION = 0.25  # of one commanded step length


class Policy:
    def __init__(self, config: EnvConfig, seed: int = 0):
        self.config = config
        self.dim = action_dim(config.action_variant)
        self.rng = np.random.default_rng(seed)

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)

    def act(self, obs: Observation) -> np.ndarray:
        raise NotImplementedError


class StationaryPolicy(Policy):
    def act(self, obs):
        return np.zeros(self.dim)


class RandomWalkPolicy(Policy):
    def act(self, obs):
        return self.rng.uniform(-1.0, 1.0, self.dim)


class FrontierGreedyPolicy(Policy):
    """Window-local frontier chasing: BFS to the nearest free cell that
    borders unknown space, commanding planar motion toward its first step.
    Deliberately myopic; falls back to a held random heading when the
    window holds no frontier or the agent stops making progress.
    """

    def __init__(self, config: EnvConfig, seed: int = 0):
        super().__init__(config, seed)
        if config.action_variant not in ("planar2d", "full3d"):
            raise ValueError("frontier_greedy emits planar motion (planar2d or full3d)")
        if "ego_map" not in config.observation_variant:
            raise ValueError("frontier_greedy needs the ego_map observation")
        eps = config.map_params.epsilon
        self._p_free = float(probability(-eps))
        self._p_occ = float(probability(eps))
        self._inflate = int(math.ceil(config.limits.body_radius / config.cell_size))
        # inside the scan's angular-resolution radius every line-of-sight
        # cell gets painted, so an unknown cell that close is a wall sliver
        # between ray endpoints (or occluded) and can never be cleared by
        # approaching: such cells are struck off for the whole episode
        rays_per_radian = config.lidar.ray_count / config.lidar.field_of_view
        self._dead_radius = max(2, int(math.floor(rays_per_radian)))
        self._min_depth = max(2, int(math.ceil(rays_per_radian)))
        self._last_pos = None
        self._hold = 0
        self._escape = 0
        self._held_cmd = np.zeros(2)
        self._was_moving = False
        self._dead = None  # lazily sized world-frame bitmap of dead cells
        self._disc = None
        self._target = None  # committed frontier cell, world frame
        self._target_ttl = 0
        self._recent = deque(maxlen=_TRAP_WINDOW)
        self._wander_streak = 0

    def reset(self, seed=None):
        super().reset(seed)
        self._last_pos = None
        self._hold = 0
        self._escape = 0
        self._held_cmd = np.zeros(2)
        self._was_moving = False
        self._dead = None
        self._target = None
        self._target_ttl = 0
        self._recent.clear()
        self._wander_streak = 0

    def _disc_mask(self, w):
        if self._disc is None or self._disc.shape[0] != w:
            span = np.arange(w) - w // 2
            dx, dy = np.meshgrid(span, span)
            self._disc = dx * dx + dy * dy <= self._dead_radius * self._dead_radius
        return self._disc

    def _strike_dead_cells(self, base, pose):
        """Blacklist in-radius unknowns (world frame) and mask them blocked."""
        w = base.shape[0]
        if self._dead is None:
            extent = 2048  # generous upper bound on level size in cells
            self._dead = np.zeros((extent, extent), dtype=bool)
        cx = int(math.floor(pose[0] / self.config.cell_size))
        cy = int(math.floor(pose[1] / self.config.cell_size))
        x0 = cx - w // 2
        y0 = cy - w // 2
        gx0, gy0 = max(0, x0), max(0, y0)
        gx1 = min(self._dead.shape[1], x0 + w)
        gy1 = min(self._dead.shape[0], y0 + w)
        if gx1 <= gx0 or gy1 <= gy0:
            return
        sub = self._dead[gy0:gy1, gx0:gx1]
        wy0, wx0 = gy0 - y0, gx0 - x0
        view = base[wy0 : wy0 + sub.shape[0], wx0 : wx0 + sub.shape[1]]
        unknown = view == 0
        sub |= unknown & self._disc_mask(w)[wy0 : wy0 + sub.shape[0], wx0 : wx0 + sub.shape[1]]
        # struck cells are almost always wall slivers: treat them exactly
        # like observed walls, including clearance inflation
        view[unknown & sub] = 2

    def _command(self, vx, vy):
        cmd = np.zeros(self.dim)
        cmd[0] = vx
        cmd[1] = vy
        return cmd

    def _random_heading(self, window=None):
        """Seeded exploratory heading; prefers clear, unknown-rich rays.

        Repeated frontier-less wanders escalate into longer straight runs
        so the agent crosses already-mapped space instead of milling in it.
        """
        prev = None
        if np.abs(self._held_cmd).max() > 0:
            norm = math.hypot(self._held_cmd[0], self._held_cmd[1])
            prev = (self._held_cmd[0] / norm, self._held_cmd[1] / norm)
        best = None
        best_score = -1e18
        for _ in range(8):
            angle = self.rng.uniform(-math.pi, math.pi)
            c, s = math.cos(angle), math.sin(angle)
            score = 0.0
            if window is not None:
                score = self._ray_score(window, c, s)
            if prev is not None and c * prev[0] + s * prev[1] < -0.3:
                score -= 1e6  # do not double back unless nothing else works
            if score > best_score:
                best_score = score
                best = (c, s)
            if window is None:
                break
        c, s = best
        scale = max(abs(c), abs(s))
        self._held_cmd = np.array([c / scale, s / scale])
        self._hold = min(_RANDOM_HEADING_HOLD * (1 + self._wander_streak), 90)
        self._wander_streak += 1

    def _ray_score(self, window, c, s):
        """Clear distance plus unknown cells seen along a window ray."""
        w = window.shape[0]
        center = w // 2
        clear = 0.0
        unknown = 0.0
        for k in range(1, center):
            x = center + int(round(k * c))
            y = center + int(round(k * s))
            if not (0 <= x < w and 0 <= y < w):
                break
            p = window[y, x]
            if p > self._p_occ:
                break
            clear = k
            if self._p_free <= p <= self._p_occ:
                unknown += 1.0
        return clear + 4.0 * unknown

    def act(self, obs):
        window = obs.ego_map
        pos = obs.pose[:2] if obs.pose is not None else None

        stuck = False
        if pos is not None and self._last_pos is not None:
            step_len = self.config.limits.v_max * self.config.limits.dt
            moved = math.hypot(pos[0] - self._last_pos[0], pos[1] - self._last_pos[1])
            if self._was_moving and moved < _STUCK_FRACTION * step_len:
                stuck = True
        if pos is not None:
            self._last_pos = (float(pos[0]), float(pos[1]))

        if pos is not None:
            self._recent.append((float(pos[0]), float(pos[1])))
        trapped = False
        if len(self._recent) == _TRAP_WINDOW and self._escape <= 0:
            xs = [p[0] for p in self._recent]
            ys = [p[1] for p in self._recent]
            trapped = (max(xs) - min(xs) < _TRAP_EXTENT) and (max(ys) - min(ys) < _TRAP_EXTENT)

        if stuck or trapped:
            self._random_heading(window)
            self._escape = _TRAP_ESCAPE_HOLD if trapped else _ESCAPE_HOLD
            self._target = None
            if trapped:
                self._recent.clear()
        if self._escape > 0:
            # back away from the contact before consulting frontiers again
            self._escape -= 1
            self._hold -= 1
            self._was_moving = True
            return self._command(*self._held_cmd)

        center = window.shape[0] // 2
        base = np.ones(window.shape, dtype=np.int8)  # 1 = free
        base[window > self._p_occ] = 2
        base[(window >= self._p_free) & (window <= self._p_occ)] = 0
        if pos is not None:
            self._strike_dead_cells(base, pos)
        blocked = base == 2
        # inflate walls by the body radius; if that walls the agent in,
        # retry with less clearance before giving up
        for inflate in range(self._inflate, -1, -1):
            cls = base.copy()
            if inflate > 0:
                grown = blocked.copy()
                for _ in range(inflate):
                    nxt = grown.copy()
                    nxt[1:, :] |= grown[:-1, :]
                    nxt[:-1, :] |= grown[1:, :]
                    nxt[:, 1:] |= grown[:, :-1]
                    nxt[:, :-1] |= grown[:, 1:]
                    grown = nxt
                cls[grown & (cls == 1)] = 2
            cls[center, center] = 1  # the agent is here, so it is traversable
            commit_x = commit_y = -1
            if pos is not None and self._target is not None and self._target_ttl > 0:
                ax = int(math.floor(pos[0] / self.config.cell_size))
                ay = int(math.floor(pos[1] / self.config.cell_size))
                commit_x = self._target[0] - (ax - center)
                commit_y = self._target[1] - (ay - center)
            dx, dy, found, fx, fy = _kernels.frontier_route(
                cls, center, center, self._min_depth, commit_x, commit_y, _FRONTIER_MIN_MASS
            )
            if found and not (dx == 0 and dy == 0):
                if pos is not None:
                    ax = int(math.floor(pos[0] / self.config.cell_size))
                    ay = int(math.floor(pos[1] / self.config.cell_size))
                    world_target = (fx + ax - center, fy + ay - center)
                    if world_target == self._target:
                        self._target_ttl -= 1
                    else:
                        self._target = world_target
                        self._target_ttl = _TARGET_COMMIT_STEPS
                # a visible frontier preempts any wander in progress
                self._hold = 0
                self._wander_streak = 0
                self._was_moving = True
                return self._command(float(dx), float(dy))
        self._target = None
        if self._hold <= 0:
            self._random_heading(window)
        self._hold -= 1
        self._was_moving = True
        return self._command(*self._held_cmd)


def make_policy(kind: str, config: EnvConfig, seed: int = 0) -> Policy:
    if kind == "stationary":
        return StationaryPolicy(config, seed)
    if kind == "random_walk":
        return RandomWalkPolicy(config, seed)
    if kind == "frontier_greedy":
        return FrontierGreedyPolicy(config, seed)
    raise ValueError(f"unknown policy kind {kind!r}; choose from {POLICY_KINDS}")
