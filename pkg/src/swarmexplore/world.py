"""Level geometry: closed-room occupancy grids and the seven default levels.

Levels are generated procedurally from a LevelSpec so difficulty scales
with the level id: footprint and room/obstacle counts never decrease.
Worlds can also be loaded from a plain-text grid format for externally
authored maps.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels

DEFAULT_CELL_SIZE = 0.04
WALL_THICKNESS = 0.12
SPAWN_CLEARANCE = 0.12

N_LEVELS = 7


class WorldError(ValueError):
    """Raised when a spec or map file cannot produce a valid world."""


@dataclass(frozen=True)
class Partition:
    """Thin interior wall with a door gap cut along its length."""

    orientation: str  # "v": wall at x=position spanning y in [start, end]
    position: float
    start: float
    end: float
    door_center: float
    door_width: float
    thickness: float = WALL_THICKNESS

    def rects(self):
        half = self.thickness / 2.0
        gap0 = self.door_center - self.door_width / 2.0
        gap1 = self.door_center + self.door_width / 2.0
        spans = []
        if gap0 > self.start:
            spans.append((self.start, gap0))
        if gap1 < self.end:
            spans.append((gap1, self.end))
        out = []
        for a, b in spans:
            if self.orientation == "v":
                out.append((self.position - half, a, self.position + half, b))
            else:
                out.append((a, self.position - half, b, self.position + half))
        return out


@dataclass(frozen=True)
class LevelSpec:
    level_id: int
    width_m: float
    height_m: float
    wall_segments: tuple = ()
    obstacle_count: int = 0
    room_partitions: tuple = ()
    seed: int = 0


@dataclass
class GridWorld:
    width_cells: int
    height_cells: int
    cell_size: float
    static_occupancy: np.ndarray  # bool, shape (height, width); True = wall
    spawn_points: list
    level_id: int
    reachable_free: np.ndarray = field(default=None, repr=False)
    explorable_cell_count: int = 0

    def __post_init__(self):
        self.static_occupancy.setflags(write=False)
        if self.reachable_free is None:
            self._compute_reachability()
        self.reachable_free.setflags(write=False)

    def _compute_reachability(self):
        mask = np.zeros_like(self.static_occupancy, dtype=np.uint8)
        sx, sy = self.spawn_points[0]
        ix, iy = self.cell_of(sx, sy)
        count = _kernels.flood_fill(self.static_occupancy, ix, iy, mask)
        self.reachable_free = mask.astype(bool)
        self.explorable_cell_count = int(count)

    def cell_of(self, x, y):
        return int(math.floor(x / self.cell_size)), int(math.floor(y / self.cell_size))

    @property
    def width_m(self):
        return self.width_cells * self.cell_size

    @property
    def height_m(self):
        return self.height_cells * self.cell_size


def is_occupied(world: GridWorld, cell) -> bool:
    """Occupancy of a (ix, iy) cell; out-of-bounds reads as occupied."""
    ix, iy = cell
    if ix < 0 or ix >= world.width_cells or iy < 0 or iy >= world.height_cells:
        return True
    return bool(world.static_occupancy[iy, ix])


def explorable_area(world: GridWorld) -> int:
    """Free cells reachable from spawn_points[0] via 4-connectivity."""
    return world.explorable_cell_count


def default_level_spec(level_id: int, seed: int = 0) -> LevelSpec:
    """Built-in level geometry, difficulty nondecreasing in level_id."""
    if not 0 <= level_id < N_LEVELS:
        raise WorldError(f"level_id must be in [0, {N_LEVELS - 1}], got {level_id}")
    side = 8.0 + 2.0 * level_id
    walls = ()
    partitions = ()
    obstacles = 0
    t = WALL_THICKNESS
    if level_id == 1:
        walls = (
            (3.3, 0.0, 3.3 + t, 4.0),
            (6.3, 6.0, 6.3 + t, side),
        )
    elif level_id == 2:
        walls = (
            (3.9, 0.0, 3.9 + t, 4.8),
            (7.9, 7.2, 7.9 + t, side),
            (0.0, 6.0, 4.8, 6.0 + t),
        )
    elif level_id == 3:
        walls = (
            (4.6, 0.0, 4.6 + t, 5.6),
            (9.2, 8.4, 9.2 + t, side),
            (0.0, 7.0, 5.6, 7.0 + t),
        )
        obstacles = 6
    elif level_id == 4:
        partitions = (
            Partition("v", 8.0, 0.0, side, door_center=8.0, door_width=1.6),
            Partition("h", 8.0, 0.0, side, door_center=8.0, door_width=1.6),
            Partition("v", 4.0, 0.0, 3.0, door_center=1.5, door_width=1.0),
            Partition("h", 12.0, 12.0, side, door_center=14.0, door_width=1.0),
        )
        obstacles = 8
    elif level_id == 5:
        partitions = (
            Partition("v", 9.0, 0.0, side, door_center=9.0, door_width=1.6),
            Partition("h", 9.0, 0.0, side, door_center=9.0, door_width=1.6),
            Partition("v", 4.5, 0.0, 3.4, door_center=1.7, door_width=1.0),
            Partition("h", 13.5, 13.5, side, door_center=15.7, door_width=1.0),
        )
        obstacles = 16
    elif level_id == 6:
        # blueprint-like layout: hall spine with rooms on both sides
        partitions = (
            Partition("v", 7.0, 0.0, side, door_center=3.5, door_width=1.1),
            Partition("v", 13.0, 0.0, side, door_center=16.5, door_width=1.1),
            Partition("h", 7.0, 0.0, 7.0, door_center=3.5, door_width=1.1),
            Partition("h", 13.0, 0.0, 7.0, door_center=3.5, door_width=1.1),
            Partition("h", 7.0, 13.0, side, door_center=16.5, door_width=1.1),
            Partition("h", 13.0, 13.0, side, door_center=16.5, door_width=1.1),
            Partition("h", 10.0, 7.0, 13.0, door_center=10.0, door_width=1.4),
        )
        obstacles = 16
    return LevelSpec(
        level_id=level_id,
        width_m=side,
        height_m=side,
        wall_segments=walls,
        obstacle_count=obstacles,
        room_partitions=partitions,
        seed=seed,
    )


def _rasterize_rect(occ, rect, cell_size):
    x0, y0, x1, y1 = rect
    w = occ.shape[1]
    h = occ.shape[0]
    ix0 = max(0, int(math.floor(x0 / cell_size)))
    iy0 = max(0, int(math.floor(y0 / cell_size)))
    ix1 = min(w, int(math.ceil(x1 / cell_size)))
    iy1 = min(h, int(math.ceil(y1 / cell_size)))
    if ix1 > ix0 and iy1 > iy0:
        occ[iy0:iy1, ix0:ix1] = True


def _clearance_ok(occ, cell_size, x, y, clearance):
    w = occ.shape[1]
    h = occ.shape[0]
    r = clearance
    ix0 = int(math.floor((x - r) / cell_size))
    ix1 = int(math.floor((x + r) / cell_size))
    iy0 = int(math.floor((y - r) / cell_size))
    iy1 = int(math.floor((y + r) / cell_size))
    if ix0 < 0 or iy0 < 0 or ix1 >= w or iy1 >= h:
        return False
    return not occ[iy0 : iy1 + 1, ix0 : ix1 + 1].any()


def _place_spawns(occ, cell_size, count, clearance):
    """Deterministic spawn placement near the lower-left open region."""
    anchors = [(1.0, 1.0), (1.6, 1.0), (1.0, 1.6), (1.6, 1.6), (2.2, 1.0), (1.0, 2.2)]
    spawns = []
    free_iy, free_ix = np.nonzero(~occ)
    cx = (free_ix + 0.5) * cell_size
    cy = (free_iy + 0.5) * cell_size
    for ax, ay in anchors:
        if len(spawns) == count:
            break
        d2 = (cx - ax) ** 2 + (cy - ay) ** 2
        for idx in np.argsort(d2, kind="stable"):
            x = float(cx[idx])
            y = float(cy[idx])
            if not _clearance_ok(occ, cell_size, x, y, clearance):
                continue
            if any((x - sx) ** 2 + (y - sy) ** 2 < 0.16 for sx, sy in spawns):
                continue
            spawns.append((x, y))
            break
    if len(spawns) < count:
        raise WorldError("could not place the requested spawn points with clearance")
    return spawns


def _free_space_connected(occ, spawn_cell):
    mask = np.zeros(occ.shape, dtype=np.uint8)
    reached = _kernels.flood_fill(occ, spawn_cell[0], spawn_cell[1], mask)
    total_free = occ.size - int(np.count_nonzero(occ))
    return reached == total_free


def build_level(
    spec,
    cell_size: float = DEFAULT_CELL_SIZE,
    spawn_count: int = 4,
    spawn_clearance: float = SPAWN_CLEARANCE,
) -> GridWorld:
    """Rasterize a LevelSpec into a GridWorld. Pure function of its inputs.

    Also accepts a path to (or the text of) an externally authored map in
    the plain-text grid format.
    """
    if isinstance(spec, (str, bytes, os.PathLike)):
        text = spec if isinstance(spec, str) and "\n" in spec else Path(spec).read_text()
        return load_world(text)
    if not 0 <= spec.level_id < N_LEVELS:
        raise WorldError(f"level_id must be in [0, {N_LEVELS - 1}]")
    if spec.width_m <= 0 or spec.height_m <= 0 or cell_size <= 0:
        raise WorldError("dimensions must be positive")
    w = int(round(spec.width_m / cell_size))
    h = int(round(spec.height_m / cell_size))
    occ = np.zeros((h, w), dtype=bool)
    border = max(1, int(round(WALL_THICKNESS / cell_size)))
    occ[:border, :] = True
    occ[-border:, :] = True
    occ[:, :border] = True
    occ[:, -border:] = True
    for rect in spec.wall_segments:
        _rasterize_rect(occ, rect, cell_size)
    for part in spec.room_partitions:
        for rect in part.rects():
            _rasterize_rect(occ, rect, cell_size)

    spawns = _place_spawns(occ, cell_size, spawn_count, spawn_clearance)
    spawn_cell = (
        int(math.floor(spawns[0][0] / cell_size)),
        int(math.floor(spawns[0][1] / cell_size)),
    )
    if not _free_space_connected(occ, spawn_cell):
        raise WorldError("level walls disconnect the free space from the spawn region")

    rng = np.random.default_rng(spec.seed)
    placed = 0
    attempts = 0
    while placed < spec.obstacle_count:
        attempts += 1
        if attempts > 400 * max(1, spec.obstacle_count):
            raise WorldError("could not place obstacles without disconnecting free space")
        cx = rng.uniform(1.2, spec.width_m - 1.2)
        cy = rng.uniform(1.2, spec.height_m - 1.2)
        hx = rng.uniform(0.15, 0.30)
        hy = rng.uniform(0.15, 0.30)
        rect = (cx - hx, cy - hy, cx + hx, cy + hy)
        if any(
            rect[0] - 0.3 <= sx <= rect[2] + 0.3 and rect[1] - 0.3 <= sy <= rect[3] + 0.3
            for sx, sy in spawns
        ):
            continue
        trial = occ.copy()
        _rasterize_rect(trial, rect, cell_size)
        if not _free_space_connected(trial, spawn_cell):
            continue
        if not all(_clearance_ok(trial, cell_size, sx, sy, spawn_clearance) for sx, sy in spawns):
            continue
        occ = trial
        placed += 1

    world = GridWorld(
        width_cells=w,
        height_cells=h,
        cell_size=cell_size,
        static_occupancy=occ,
        spawn_points=spawns,
        level_id=spec.level_id,
    )
    _validate(world)
    return world


def _validate(world: GridWorld):
    occ = world.static_occupancy
    if not (occ[0, :].all() and occ[-1, :].all() and occ[:, 0].all() and occ[:, -1].all()):
        raise WorldError("border cells must all be occupied")
    mask = world.reachable_free
    for x, y in world.spawn_points:
        ix, iy = world.cell_of(x, y)
        if is_occupied(world, (ix, iy)):
            raise WorldError(f"spawn point ({x}, {y}) lies in an occupied cell")
        if not mask[iy, ix]:
            raise WorldError(f"spawn point ({x}, {y}) is disconnected from spawn 0")


def world_to_text(world: GridWorld) -> str:
    """Serialize to the plain-text grid format."""
    spawn_cells = {world.cell_of(x, y) for x, y in world.spawn_points}
    lines = [
        f"{world.width_cells} {world.height_cells} {world.cell_size} {world.level_id}"
    ]
    for iy in range(world.height_cells):
        row = []
        for ix in range(world.width_cells):
            if world.static_occupancy[iy, ix]:
                row.append("#")
            elif (ix, iy) in spawn_cells:
                row.append("S")
            else:
                row.append(".")
        lines.append("".join(row))
    return "\n".join(lines) + "\n"


def load_world(text: str) -> GridWorld:
    """Parse the plain-text grid format ('#' wall, '.' free, 'S' spawn)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise WorldError("empty map text")
    header = lines[0].split()
    if len(header) != 4:
        raise WorldError("header must be: width height cell_size_m level_id")
    w, h = int(header[0]), int(header[1])
    cell_size = float(header[2])
    level_id = int(header[3])
    rows = lines[1:]
    if len(rows) != h:
        raise WorldError(f"expected {h} rows, got {len(rows)}")
    occ = np.zeros((h, w), dtype=bool)
    spawns = []
    for iy, row in enumerate(rows):
        if len(row) != w:
            raise WorldError(f"row {iy} has length {len(row)}, expected {w}")
        for ix, ch in enumerate(row):
            if ch == "#":
                occ[iy, ix] = True
            elif ch == "S":
                spawns.append(((ix + 0.5) * cell_size, (iy + 0.5) * cell_size))
            elif ch != ".":
                raise WorldError(f"unknown cell character {ch!r} at row {iy}")
    if not spawns:
        raise WorldError("map has no spawn points ('S')")
    world = GridWorld(
        width_cells=w,
        height_cells=h,
        cell_size=cell_size,
        static_occupancy=occ,
        spawn_points=spawns,
        level_id=level_id,
    )
    _validate(world)
    return world
