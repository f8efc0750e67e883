"""Numba-compiled inner loops shared by the simulation modules.

Everything here operates on plain numpy arrays so the kernels stay
cache-friendly and deterministic; wrapping/validation lives in the
calling modules.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def flood_fill(occupancy, start_ix, start_iy, out_mask):
    """Mark all free cells 4-connected to the start cell; return their count."""
    height, width = occupancy.shape
    out_mask[:, :] = 0
    if occupancy[start_iy, start_ix]:
        return 0
    queue = np.empty(height * width, dtype=np.int64)
    head = 0
    tail = 0
    queue[tail] = start_iy * width + start_ix
    tail += 1
    out_mask[start_iy, start_ix] = 1
    count = 1
    while head < tail:
        flat = queue[head]
        head += 1
        iy = flat // width
        ix = flat - iy * width
        # neighbor order fixed for determinism
        if ix + 1 < width and not occupancy[iy, ix + 1] and not out_mask[iy, ix + 1]:
            out_mask[iy, ix + 1] = 1
            queue[tail] = iy * width + ix + 1
            tail += 1
            count += 1
        if ix - 1 >= 0 and not occupancy[iy, ix - 1] and not out_mask[iy, ix - 1]:
            out_mask[iy, ix - 1] = 1
            queue[tail] = iy * width + ix - 1
            tail += 1
            count += 1
        if iy + 1 < height and not occupancy[iy + 1, ix] and not out_mask[iy + 1, ix]:
            out_mask[iy + 1, ix] = 1
            queue[tail] = (iy + 1) * width + ix
            tail += 1
            count += 1
        if iy - 1 >= 0 and not occupancy[iy - 1, ix] and not out_mask[iy - 1, ix]:
            out_mask[iy - 1, ix] = 1
            queue[tail] = (iy - 1) * width + ix
            tail += 1
            count += 1
    return count


@njit(cache=True)
def cast_rays(
    occupancy,
    cell_size,
    origin_x,
    origin_y,
    angles,
    max_range,
    agent_xs,
    agent_ys,
    agent_radius,
    out_ranges,
    out_hits,
):
    """Cast one ray per angle against the grid plus agent discs.

    Grid traversal is incremental cell walking; the returned range is the
    exact ray parameter at which the ray enters the first occupied cell
    (or touches an agent disc). Out-of-bounds counts as occupied.
    """
    height, width = occupancy.shape
    n_agents = agent_xs.shape[0]
    for k in range(angles.shape[0]):
        angle = angles[k]
        dir_x = math.cos(angle)
        dir_y = math.sin(angle)
        best_t = max_range
        hit = False

        # --- grid walk ---
        ix = int(math.floor(origin_x / cell_size))
        iy = int(math.floor(origin_y / cell_size))
        if dir_x > 0.0:
            step_x = 1
            t_max_x = ((ix + 1) * cell_size - origin_x) / dir_x
            t_delta_x = cell_size / dir_x
        elif dir_x < 0.0:
            step_x = -1
            t_max_x = (ix * cell_size - origin_x) / dir_x
            t_delta_x = -cell_size / dir_x
        else:
            step_x = 0
            t_max_x = 1e30
            t_delta_x = 1e30
        if dir_y > 0.0:
            step_y = 1
            t_max_y = ((iy + 1) * cell_size - origin_y) / dir_y
            t_delta_y = cell_size / dir_y
        elif dir_y < 0.0:
            step_y = -1
            t_max_y = (iy * cell_size - origin_y) / dir_y
            t_delta_y = -cell_size / dir_y
        else:
            step_y = 0
            t_max_y = 1e30
            t_delta_y = 1e30

        while True:
            if t_max_x < t_max_y:
                t = t_max_x
                ix += step_x
                t_max_x += t_delta_x
            else:
                t = t_max_y
                iy += step_y
                t_max_y += t_delta_y
            if t > best_t:
                break
            if ix < 0 or ix >= width or iy < 0 or iy >= height:
                best_t = t
                hit = True
                break
            if occupancy[iy, ix]:
                best_t = t
                hit = True
                break

        # --- agent discs ---
        for j in range(n_agents):
            rel_x = agent_xs[j] - origin_x
            rel_y = agent_ys[j] - origin_y
            b = rel_x * dir_x + rel_y * dir_y
            if b <= 0.0:
                continue
            c = rel_x * rel_x + rel_y * rel_y - agent_radius * agent_radius
            if c < 0.0:
                # origin inside the disc: immediate contact
                if best_t > 0.0:
                    best_t = 0.0
                    hit = True
                continue
            disc = b * b - c
            if disc <= 0.0:
                continue
            t_hit = b - math.sqrt(disc)
            if 0.0 < t_hit < best_t:
                best_t = t_hit
                hit = True

        out_ranges[k] = best_t if best_t < max_range else max_range
        out_hits[k] = 1 if hit else 0


@njit(cache=True)
def rasterize_scan(
    log_odds,
    stamp,
    stamp_id,
    origin_ix,
    origin_iy,
    end_ix,
    end_iy,
    hit_flags,
    l_free,
    l_occ,
    l_min,
    l_max,
    changed_ix,
    changed_iy,
    changed_old,
):
    """Apply one scan's Bresenham lines to a log-odds grid in place.

    Cells strictly between the origin cell and each endpoint get l_free per
    crossing ray; the endpoint cell gets l_occ when the ray hit, else
    l_free. The origin cell is never touched. Increments accumulate over
    the whole scan and are clamped once at the end. Returns the number of
    distinct changed cells (recorded in the changed_* buffers with their
    pre-update values).
    """
    height, width = log_odds.shape
    n_changed = 0
    for r in range(end_ix.shape[0]):
        x1 = end_ix[r]
        y1 = end_iy[r]
        x = origin_ix
        y = origin_iy
        dx = abs(x1 - x)
        sx = 1 if x < x1 else -1
        dy = -abs(y1 - y)
        sy = 1 if y < y1 else -1
        err = dx + dy
        while True:
            if not (x == origin_ix and y == origin_iy):
                if 0 <= x < width and 0 <= y < height:
                    if x == x1 and y == y1 and hit_flags[r]:
                        inc = l_occ
                    else:
                        inc = l_free
                    if stamp[y, x] != stamp_id:
                        stamp[y, x] = stamp_id
                        changed_ix[n_changed] = x
                        changed_iy[n_changed] = y
                        changed_old[n_changed] = log_odds[y, x]
                        n_changed += 1
                    log_odds[y, x] += inc
            if x == x1 and y == y1:
                break
            e2 = 2 * err
            if e2 >= dy:
                err += dy
                x += sx
            if e2 <= dx:
                err += dx
                y += sy
    for i in range(n_changed):
        cx = changed_ix[i]
        cy = changed_iy[i]
        v = log_odds[cy, cx]
        if v > l_max:
            log_odds[cy, cx] = l_max
        elif v < l_min:
            log_odds[cy, cx] = l_min
    return n_changed


@njit(cache=True, inline="always")
def _box_sweep_t(px, py, mx, my, x0, y0, x1, y1, radius):
    """Earliest t in [0,1] at which a disc moving p + t*m touches an AABB.

    Returns 2.0 when there is no contact. Already-overlapping but
    separating starts never collide (distance to a convex set is convex
    along a line).
    """
    best = 2.0
    # face regions: box expanded along one axis, slab-clipped on the other
    for expand_x in range(2):
        if expand_x == 1:
            ex0 = x0 - radius
            ex1 = x1 + radius
            ey0 = y0
            ey1 = y1
        else:
            ex0 = x0
            ex1 = x1
            ey0 = y0 - radius
            ey1 = y1 + radius
        t_enter = 0.0
        t_exit = 1.0
        ok = True
        if mx != 0.0:
            ta = (ex0 - px) / mx
            tb = (ex1 - px) / mx
            if ta > tb:
                ta, tb = tb, ta
            if ta > t_enter:
                t_enter = ta
            if tb < t_exit:
                t_exit = tb
        elif px < ex0 or px > ex1:
            ok = False
        if ok:
            if my != 0.0:
                ta = (ey0 - py) / my
                tb = (ey1 - py) / my
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t_enter:
                    t_enter = ta
                if tb < t_exit:
                    t_exit = tb
            elif py < ey0 or py > ey1:
                ok = False
        if ok and t_enter <= t_exit and t_enter < best:
            best = t_enter
    # corner regions: circles of the combined radius at box corners
    for ci in range(4):
        cx = x0 if ci % 2 == 0 else x1
        cy = y0 if ci // 2 == 0 else y1
        dx = px - cx
        dy = py - cy
        a = mx * mx + my * my
        b = dx * mx + dy * my
        c = dx * dx + dy * dy - radius * radius
        if c < 0.0:
            # inside the corner circle at t=0: approach handled by caller
            if b < 0.0 and 0.0 < best:
                best = 0.0
            continue
        if a == 0.0:
            continue
        disc = b * b - a * c
        if disc <= 0.0:
            continue
        t_hit = (-b - math.sqrt(disc)) / a
        if 0.0 <= t_hit <= 1.0 and t_hit < best:
            best = t_hit
    return best


@njit(cache=True)
def sweep_move(
    occupancy,
    cell_size,
    px,
    py,
    mx,
    my,
    body_radius,
    other_xs,
    other_ys,
    other_radius,
):
    """Earliest contact of a moving disc with occupied cells or other discs.

    Returns (t, collided) with t in [0, 1]: the admissible fraction of the
    motion (mx, my). Contacts already present at t=0 only count when the
    motion approaches the contacted object, so touching agents can still
    separate.
    """
    height, width = occupancy.shape
    if mx == 0.0 and my == 0.0:
        return 1.0, False
    best = 2.0

    lo_x = min(px, px + mx) - body_radius - cell_size
    hi_x = max(px, px + mx) + body_radius + cell_size
    lo_y = min(py, py + my) - body_radius - cell_size
    hi_y = max(py, py + my) + body_radius + cell_size
    ix0 = max(0, int(math.floor(lo_x / cell_size)))
    ix1 = min(width - 1, int(math.floor(hi_x / cell_size)))
    iy0 = max(0, int(math.floor(lo_y / cell_size)))
    iy1 = min(height - 1, int(math.floor(hi_y / cell_size)))
    for iy in range(iy0, iy1 + 1):
        for ix in range(ix0, ix1 + 1):
            if not occupancy[iy, ix]:
                continue
            # skip separating starts: overlap check against the cell box
            cx0 = ix * cell_size
            cy0 = iy * cell_size
            cx1 = cx0 + cell_size
            cy1 = cy0 + cell_size
            qx = min(max(px, cx0), cx1)
            qy = min(max(py, cy0), cy1)
            ddx = px - qx
            ddy = py - qy
            if ddx * ddx + ddy * ddy < body_radius * body_radius:
                if ddx * mx + ddy * my >= 0.0:
                    continue
                best = 0.0
                continue
            t = _box_sweep_t(px, py, mx, my, cx0, cy0, cx1, cy1, body_radius)
            if t < best:
                best = t

    combined = body_radius + other_radius
    for j in range(other_xs.shape[0]):
        dx = px - other_xs[j]
        dy = py - other_ys[j]
        b = dx * mx + dy * my
        c = dx * dx + dy * dy - combined * combined
        if c < 0.0:
            if b < 0.0:
                best = 0.0
            continue
        a = mx * mx + my * my
        disc = b * b - a * c
        if disc <= 0.0:
            continue
        t_hit = (-b - math.sqrt(disc)) / a
        if 0.0 <= t_hit <= 1.0 and t_hit < best and b < 0.0:
            best = t_hit

    if best <= 1.0:
        return best, True
    return 1.0, False


@njit(cache=True)
def _bfs_distance(cell_class, start_ix, start_iy, dist, queue):
    """Fill dist with 4-connected BFS depths over free (==1) cells."""
    height, width = cell_class.shape
    dist[:] = -1
    head = 0
    tail = 0
    start_flat = start_iy * width + start_ix
    dist[start_flat] = 0
    queue[tail] = start_flat
    tail += 1
    moves_x = (1, -1, 0, 0)
    moves_y = (0, 0, 1, -1)
    while head < tail:
        flat = queue[head]
        head += 1
        iy = flat // width
        ix = flat - iy * width
        d = dist[flat]
        for m in range(4):
            nx = ix + moves_x[m]
            ny = iy + moves_y[m]
            if nx < 0 or nx >= width or ny < 0 or ny >= height:
                continue
            nflat = ny * width + nx
            if cell_class[ny, nx] == 1 and dist[nflat] == -1:
                dist[nflat] = d + 1
                queue[tail] = nflat
                tail += 1


@njit(cache=True)
def _unknown_mass(cell_class, ix, iy):
    """Unknown cells in the 7x7 patch around (ix, iy); outside counts too."""
    height, width = cell_class.shape
    count = 0
    for dy in range(-3, 4):
        for dx in range(-3, 4):
            nx = ix + dx
            ny = iy + dy
            if nx < 0 or nx >= width or ny < 0 or ny >= height:
                count += 1  # beyond the window reads as unexplored
            elif cell_class[ny, nx] == 0:
                count += 1
    return count


@njit(cache=True)
def _is_frontier(cell_class, ix, iy, min_mass):
    """Free cell bordering an unknown area of at least min_mass cells.

    Tiny unknown blobs are sub-resolution slivers along walls; chasing
    them one by one wastes whole episodes, so they are not targets.
    """
    height, width = cell_class.shape
    if cell_class[iy, ix] != 1:
        return False
    for m in range(4):
        nx = ix + (1, -1, 0, 0)[m]
        ny = iy + (0, 0, 1, -1)[m]
        if 0 <= nx < width and 0 <= ny < height and cell_class[ny, nx] == 0:
            if _unknown_mass(cell_class, nx, ny) >= min_mass:
                return True
    return False


@njit(cache=True)
def frontier_route(cell_class, start_ix, start_iy, min_depth, commit_x, commit_y, min_mass):
    """First move of a shortest path to a frontier, with target commitment.

    cell_class: int8 grid with 0 = unknown, 1 = free, 2+ = impassable.
    A frontier is a free cell bordering unknown. When (commit_x, commit_y)
    is a valid, still-live, reachable frontier, the route goes there;
    otherwise the nearest frontier at BFS depth >= min_depth is chosen
    (closer unknowns are below the sensor's angular resolution and can
    never be cleared by approaching). Among the shortest paths the first
    move best aligned with the straight line to the target is returned,
    so successive decisions do not flip between equal-length detours.
    Returns (dx, dy, found, target_x, target_y).
    """
    height, width = cell_class.shape
    if not (0 <= start_ix < width and 0 <= start_iy < height):
        return 0, 0, False, -1, -1
    if cell_class[start_iy, start_ix] != 1:
        return 0, 0, False, -1, -1
    dist_f = np.empty(height * width, dtype=np.int32)
    queue = np.empty(height * width, dtype=np.int64)
    moves_x = (1, -1, 0, 0)
    moves_y = (0, 0, 1, -1)

    fx = -1
    fy = -1
    if (
        0 <= commit_x < width
        and 0 <= commit_y < height
        and not (commit_x == start_ix and commit_y == start_iy)
        and _is_frontier(cell_class, commit_x, commit_y, min_mass)
    ):
        _bfs_distance(cell_class, commit_x, commit_y, dist_f, queue)
        if dist_f[start_iy * width + start_ix] >= 0:
            fx = commit_x
            fy = commit_y

    if fx < 0:
        dist_s = np.empty(height * width, dtype=np.int32)
        _bfs_distance(cell_class, start_ix, start_iy, dist_s, queue)
        best_depth = 1 << 30
        ux = 0
        uy = 0
        for iy in range(height):
            for ix in range(width):
                d = dist_s[iy * width + ix]
                if d < min_depth or d >= best_depth:
                    continue
                if _is_frontier(cell_class, ix, iy, min_mass):
                    best_depth = d
                    fx = ix
                    fy = iy
        if fx < 0:
            return 0, 0, False, -1, -1
        if fx == start_ix and fy == start_iy:
            for m in range(4):
                nx = fx + moves_x[m]
                ny = fy + moves_y[m]
                if 0 <= nx < width and 0 <= ny < height and cell_class[ny, nx] == 0:
                    ux = moves_x[m]
                    uy = moves_y[m]
                    break
            return ux, uy, True, fx, fy
        _bfs_distance(cell_class, fx, fy, dist_f, queue)

    d_here = dist_f[start_iy * width + start_ix]
    best_score = -(1 << 30)
    out_x = 0
    out_y = 0
    for m in range(4):
        nx = start_ix + moves_x[m]
        ny = start_iy + moves_y[m]
        if not (0 <= nx < width and 0 <= ny < height):
            continue
        if cell_class[ny, nx] != 1:
            continue
        if dist_f[ny * width + nx] != d_here - 1:
            continue
        score = moves_x[m] * (fx - start_ix) + moves_y[m] * (fy - start_iy)
        if score > best_score:
            best_score = score
            out_x = moves_x[m]
            out_y = moves_y[m]
    if out_x == 0 and out_y == 0:
        return 0, 0, False, -1, -1
    return out_x, out_y, True, fx, fy
