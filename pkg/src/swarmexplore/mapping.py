"""Per-agent belief maps: log-odds occupancy grids and their updates.

Scan insertion rasterizes each ray with Bresenham's line algorithm; maps
from other agents fuse by summing log-odds cellwise (Bayesian combination
under conditional independence). Values are clamped to [l_min, l_max];
zero log-odds means unknown (P = 0.5).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .sensing import LidarScan

_ENDPOINT_NUDGE = 1e-6  # m along the ray so boundary hits land in the hit cell


@dataclass(frozen=True)
class MapParams:
    l_occ: float = 0.85
    l_free: float = -0.4
    l_min: float = -10.0
    l_max: float = 10.0
    epsilon: float = 0.3  # |log-odds| above this counts as known


@dataclass
class CellDelta:
    """Cells changed by one belief update, with old/new log-odds values."""

    cells_ix: np.ndarray
    cells_iy: np.ndarray
    old_log_odds: np.ndarray
    new_log_odds: np.ndarray
    discovered_count: int

    def __len__(self):
        return self.cells_ix.shape[0]

    def items(self):
        for i in range(len(self)):
            yield (int(self.cells_ix[i]), int(self.cells_iy[i])), float(self.new_log_odds[i])


class OccupancyGrid:
    def __init__(self, width: int, height: int, cell_size: float, params: MapParams = None):
        self.width = int(width)
        self.height = int(height)
        self.cell_size = float(cell_size)
        self.params = params or MapParams()
        self.log_odds = np.zeros((self.height, self.width), dtype=np.float64)
        self._stamp = None
        self._stamp_id = 0

    @classmethod
    def for_world(cls, world, params: MapParams = None) -> "OccupancyGrid":
        return cls(world.width_cells, world.height_cells, world.cell_size, params)

    def same_lattice(self, other: "OccupancyGrid") -> bool:
        # cell_size travels as float32 in snapshots; compare at that precision
        return (
            self.width == other.width
            and self.height == other.height
            and math.isclose(self.cell_size, other.cell_size, rel_tol=1e-6)
        )

    def copy(self) -> "OccupancyGrid":
        out = OccupancyGrid(self.width, self.height, self.cell_size, self.params)
        out.log_odds = self.log_odds.copy()
        return out

    def cell_of(self, x: float, y: float):
        return int(math.floor(x / self.cell_size)), int(math.floor(y / self.cell_size))

    def _scratch(self):
        if self._stamp is None:
            self._stamp = np.zeros((self.height, self.width), dtype=np.int64)
        self._stamp_id += 1
        return self._stamp, self._stamp_id


def probability(log_odds):
    """P(occupied) from log-odds."""
    return 1.0 / (1.0 + np.exp(-np.asarray(log_odds, dtype=float)))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p / (1.0 - p))


def update_from_scan(grid: OccupancyGrid, pose, scan: LidarScan) -> CellDelta:
    """Insert one scan into the grid in place; returns the changed cells.

    pose: the scanning agent's state (used for the origin cell); scan
    endpoints are recomputed from origin, angles, and ranges so the same
    code path serves both own scans and scans shared over the network.
    """
    cs = grid.cell_size
    ox, oy = scan.origin
    origin_ix, origin_iy = grid.cell_of(ox, oy)
    angles = scan.angles()
    ranges = np.asarray(scan.ranges, dtype=float)
    hits = np.asarray(scan.hit_flags).astype(np.uint8)
    # nudge along the ray: forward into the hit cell, back inside free space
    nudged = np.where(hits == 1, ranges + _ENDPOINT_NUDGE, ranges - _ENDPOINT_NUDGE)
    end_x = ox + nudged * np.cos(angles)
    end_y = oy + nudged * np.sin(angles)
    end_ix = np.clip(np.floor(end_x / cs).astype(np.int64), 0, grid.width - 1)
    end_iy = np.clip(np.floor(end_y / cs).astype(np.int64), 0, grid.height - 1)

    n_rays = angles.shape[0]
    max_line = int(2.0 * float(np.max(ranges, initial=0.0)) / cs) + 6
    cap = n_rays * max_line
    changed_ix = np.empty(cap, dtype=np.int64)
    changed_iy = np.empty(cap, dtype=np.int64)
    changed_old = np.empty(cap, dtype=np.float64)
    stamp, stamp_id = grid._scratch()
    p = grid.params
    n_changed = _kernels.rasterize_scan(
        grid.log_odds,
        stamp,
        stamp_id,
        origin_ix,
        origin_iy,
        end_ix,
        end_iy,
        hits,
        p.l_free,
        p.l_occ,
        p.l_min,
        p.l_max,
        changed_ix,
        changed_iy,
        changed_old,
    )
    cells_ix = changed_ix[:n_changed].copy()
    cells_iy = changed_iy[:n_changed].copy()
    old_vals = changed_old[:n_changed].copy()
    new_vals = grid.log_odds[cells_iy, cells_ix]
    discovered = int(
        np.count_nonzero((np.abs(old_vals) <= p.epsilon) & (np.abs(new_vals) > p.epsilon))
    )
    return CellDelta(cells_ix, cells_iy, old_vals, new_vals, discovered)


def fuse_maps(a: OccupancyGrid, b: OccupancyGrid) -> OccupancyGrid:
    """Cellwise log-odds sum, clamped; equals the Bayesian product rule."""
    if not a.same_lattice(b):
        raise ValueError("cannot fuse maps over different lattices")
    out = OccupancyGrid(a.width, a.height, a.cell_size, a.params)
    np.add(a.log_odds, b.log_odds, out=out.log_odds)
    np.clip(out.log_odds, a.params.l_min, a.params.l_max, out=out.log_odds)
    return out


def fuse_into(grid: OccupancyGrid, incoming: OccupancyGrid) -> CellDelta:
    """In-place variant of fuse_maps used for delivered map shares."""
    if not grid.same_lattice(incoming):
        raise ValueError("cannot fuse maps over different lattices")
    p = grid.params
    old = grid.log_odds.copy()
    np.add(grid.log_odds, incoming.log_odds, out=grid.log_odds)
    np.clip(grid.log_odds, p.l_min, p.l_max, out=grid.log_odds)
    changed_iy, changed_ix = np.nonzero(grid.log_odds != old)
    old_vals = old[changed_iy, changed_ix]
    new_vals = grid.log_odds[changed_iy, changed_ix]
    discovered = int(
        np.count_nonzero((np.abs(old_vals) <= p.epsilon) & (np.abs(new_vals) > p.epsilon))
    )
    return CellDelta(
        changed_ix.astype(np.int64), changed_iy.astype(np.int64), old_vals, new_vals, discovered
    )


@dataclass
class EgocentricMap:
    window: np.ndarray  # (W, W) occupancy probabilities, 0.5 where unseen
    center_cell: tuple


def extract_egocentric(grid: OccupancyGrid, pose, window_cells: int) -> EgocentricMap:
    """Fixed-size probability window centered on the agent's cell.

    The agent cell maps to window index W//2 on both axes; cells outside
    the lattice are filled with 0.5.
    """
    w = int(window_cells)
    cx, cy = grid.cell_of(pose.x, pose.y)
    half = w // 2
    window = np.full((w, w), 0.5, dtype=np.float64)
    gx0 = cx - half
    gy0 = cy - half
    sx0 = max(0, gx0)
    sy0 = max(0, gy0)
    sx1 = min(grid.width, gx0 + w)
    sy1 = min(grid.height, gy0 + w)
    if sx1 > sx0 and sy1 > sy0:
        sub = grid.log_odds[sy0:sy1, sx0:sx1]
        window[sy0 - gy0 : sy1 - gy0, sx0 - gx0 : sx1 - gx0] = 1.0 / (1.0 + np.exp(-sub))
    return EgocentricMap(window=window, center_cell=(cx, cy))


def known_cells(grid: OccupancyGrid, epsilon: float = None) -> int:
    """Count of cells classified as known (|log-odds| above epsilon)."""
    eps = grid.params.epsilon if epsilon is None else float(epsilon)
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    return int(np.count_nonzero(np.abs(grid.log_odds) > eps))


_HEADER = struct.Struct("<IIff")  # width, height, cell_size, epsilon
FIXED_POINT_SCALE = 1024.0


def serialize_grid(grid: OccupancyGrid) -> bytes:
    """Wire snapshot: 16-byte header + int16 fixed-point log-odds, row-major."""
    header = _HEADER.pack(grid.width, grid.height, grid.cell_size, grid.params.epsilon)
    quantized = np.rint(grid.log_odds * FIXED_POINT_SCALE).astype("<i2")
    return header + quantized.tobytes()


def serialized_size(width: int, height: int) -> int:
    return _HEADER.size + 2 * width * height


def deserialize_grid(data: bytes, params: MapParams = None) -> OccupancyGrid:
    width, height, cell_size, epsilon = _HEADER.unpack_from(data, 0)
    expected = serialized_size(width, height)
    if len(data) != expected:
        raise ValueError(f"map snapshot is {len(data)} bytes, expected {expected}")
    if params is None:
        params = MapParams(epsilon=float(epsilon))
    grid = OccupancyGrid(width, height, float(cell_size), params)
    raw = np.frombuffer(data, dtype="<i2", offset=_HEADER.size)
    grid.log_odds = (raw.astype(np.float64) / FIXED_POINT_SCALE).reshape(height, width)
    return grid
