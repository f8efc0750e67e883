import numpy as np
import pytest

from swarmexplore.world import GridWorld, load_world


def text_world(rows, cell_size=0.1, level_id=0):
    """Build a GridWorld from a list of row strings."""
    header = f"{len(rows[0])} {len(rows)} {cell_size} {level_id}"
    return load_world("\n".join([header] + list(rows)))


def open_room(width_cells=60, height_cells=60, cell_size=0.1, spawn=(5, 5)):
    """Border-walled empty room with one spawn cell."""
    rows = []
    for iy in range(height_cells):
        if iy in (0, height_cells - 1):
            rows.append("#" * width_cells)
        else:
            row = ["#"] + ["."] * (width_cells - 2) + ["#"]
            if iy == spawn[1]:
                row[spawn[0]] = "S"
            rows.append("".join(row))
    return text_world(rows, cell_size=cell_size)


@pytest.fixture
def small_room():
    return open_room(width_cells=40, height_cells=40, cell_size=0.1)


def reference_bresenham(x0, y0, x1, y1):
    """Classic 8-connected Bresenham, both endpoints inclusive."""
    cells = []
    dx = abs(x1 - x0)
    sx = 1 if x0 < x1 else -1
    dy = -abs(y1 - y0)
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        cells.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
    return cells


def ray_aabb_oracle(world: GridWorld, origin, angle, max_range):
    """Analytic first-hit distance: slab test against every occupied cell."""
    occ_iy, occ_ix = np.nonzero(world.static_occupancy)
    cs = world.cell_size
    x0 = occ_ix * cs
    x1 = x0 + cs
    y0 = occ_iy * cs
    y1 = y0 + cs
    dx = np.cos(angle)
    dy = np.sin(angle)
    ox, oy = origin
    with np.errstate(divide="ignore", invalid="ignore"):
        if dx != 0.0:
            tx_lo = (x0 - ox) / dx
            tx_hi = (x1 - ox) / dx
            tx_min = np.minimum(tx_lo, tx_hi)
            tx_max = np.maximum(tx_lo, tx_hi)
        else:
            inside = (x0 <= ox) & (ox <= x1)
            tx_min = np.where(inside, -np.inf, np.inf)
            tx_max = np.where(inside, np.inf, -np.inf)
        if dy != 0.0:
            ty_lo = (y0 - oy) / dy
            ty_hi = (y1 - oy) / dy
            ty_min = np.minimum(ty_lo, ty_hi)
            ty_max = np.maximum(ty_lo, ty_hi)
        else:
            inside = (y0 <= oy) & (oy <= y1)
            ty_min = np.where(inside, -np.inf, np.inf)
            ty_max = np.where(inside, np.inf, -np.inf)
    t_enter = np.maximum(tx_min, ty_min)
    t_exit = np.minimum(tx_max, ty_max)
    valid = (t_enter <= t_exit) & (t_exit >= 0.0) & (t_enter <= max_range)
    if not valid.any():
        return max_range, False
    t_hit = np.maximum(t_enter[valid], 0.0).min()
    if t_hit > max_range:
        return max_range, False
    return float(t_hit), True
