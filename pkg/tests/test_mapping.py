import math
import struct

import numpy as np
import pytest

from swarmexplore.kinematics import AgentState
from swarmexplore.mapping import (
    FIXED_POINT_SCALE,
    MapParams,
    OccupancyGrid,
    deserialize_grid,
    extract_egocentric,
    fuse_into,
    fuse_maps,
    known_cells,
    logit,
    probability,
    serialize_grid,
    serialized_size,
    update_from_scan,
)
from swarmexplore.sensing import LidarConfig, LidarScan, scan

from conftest import open_room, reference_bresenham

PARAMS = MapParams()


def single_ray_scan(origin, angle, range_m, hit, max_range=50.0):
    """One-ray scan whose angles() yields exactly `angle`."""
    return LidarScan(
        origin=origin,
        origin_heading=angle + math.pi,
        ranges=np.array([range_m], dtype=float),
        hit_flags=np.array([hit]),
        field_of_view=2.0 * math.pi,
        max_range=max_range,
    )


def grid_8x8():
    return OccupancyGrid(8, 8, 1.0, PARAMS)


def test_diagonal_ray_updates_pinned_cells():
    grid = grid_8x8()
    r = 3.0 * math.sqrt(2.0)  # (0.5, 0.5) -> (3.5, 3.5), cell (3, 3)
    delta = update_from_scan(grid, None, single_ray_scan((0.5, 0.5), math.pi / 4, r, True))
    changed = {((int(x), int(y))) for x, y in zip(delta.cells_ix, delta.cells_iy)}
    assert changed == {(1, 1), (2, 2), (3, 3)}
    assert grid.log_odds[1, 1] == PARAMS.l_free
    assert grid.log_odds[2, 2] == PARAMS.l_free
    assert grid.log_odds[3, 3] == PARAMS.l_occ
    assert grid.log_odds[0, 0] == 0.0  # origin cell untouched


def test_miss_ray_marks_endpoint_free():
    grid = grid_8x8()
    delta = update_from_scan(grid, None, single_ray_scan((0.5, 0.5), 0.0, 4.0, False))
    changed = {((int(x), int(y))) for x, y in zip(delta.cells_ix, delta.cells_iy)}
    assert changed == {(1, 0), (2, 0), (3, 0), (4, 0)}
    for x, _ in changed:
        assert grid.log_odds[0, x] == PARAMS.l_free


def test_scan_matches_reference_bresenham():
    rng = np.random.default_rng(9)
    for _ in range(200):
        grid = OccupancyGrid(24, 24, 1.0, PARAMS)
        ox, oy = int(rng.integers(0, 24)), int(rng.integers(0, 24))
        ex, ey = int(rng.integers(0, 24)), int(rng.integers(0, 24))
        if (ox, oy) == (ex, ey):
            continue
        origin = (ox + 0.5, oy + 0.5)
        target = (ex + 0.5, ey + 0.5)
        angle = math.atan2(target[1] - origin[1], target[0] - origin[0])
        dist = math.hypot(target[0] - origin[0], target[1] - origin[1])
        hit = bool(rng.integers(2))
        delta = update_from_scan(grid, None, single_ray_scan(origin, angle, dist, hit))
        line = reference_bresenham(ox, oy, ex, ey)
        expected = set(line[1:])  # origin excluded
        changed = {(int(x), int(y)) for x, y in zip(delta.cells_ix, delta.cells_iy)}
        assert changed == expected
        for x, y in line[1:-1]:
            assert grid.log_odds[y, x] == PARAMS.l_free
        assert grid.log_odds[ey, ex] == (PARAMS.l_occ if hit else PARAMS.l_free)


def test_repeated_hits_clamp_at_l_max():
    grid = grid_8x8()
    s = single_ray_scan((0.5, 0.5), 0.0, 3.0, True)
    for _ in range(30):
        update_from_scan(grid, None, s)
    assert grid.log_odds[0, 3] == PARAMS.l_max
    assert grid.log_odds[0, 1] == PARAMS.l_min


def test_discovered_count_tracks_epsilon_crossings():
    grid = grid_8x8()
    s = single_ray_scan((0.5, 0.5), 0.0, 3.0, True)
    first = update_from_scan(grid, None, s)
    assert first.discovered_count == 3  # |l_free| and l_occ both exceed epsilon
    second = update_from_scan(grid, None, s)
    assert second.discovered_count == 0


def test_fuse_identity_with_unknown_grid():
    rng = np.random.default_rng(3)
    a = OccupancyGrid(10, 10, 0.5, PARAMS)
    a.log_odds[:] = rng.uniform(-5, 5, (10, 10))
    empty = OccupancyGrid(10, 10, 0.5, PARAMS)
    fused = fuse_maps(a, empty)
    assert np.array_equal(fused.log_odds, a.log_odds)


def test_fuse_matches_bayesian_product_formula():
    a = OccupancyGrid(1, 1, 1.0, PARAMS)
    b = OccupancyGrid(1, 1, 1.0, PARAMS)
    a.log_odds[0, 0] = float(logit(0.8))
    b.log_odds[0, 0] = float(logit(0.8))
    fused = fuse_maps(a, b)
    p_c = 0.64 / (0.64 + 0.04)
    assert probability(fused.log_odds[0, 0]) == pytest.approx(p_c, abs=1e-12)


def test_fuse_commutes_bitwise():
    rng = np.random.default_rng(4)
    a = OccupancyGrid(16, 16, 1.0, PARAMS)
    b = OccupancyGrid(16, 16, 1.0, PARAMS)
    a.log_odds[:] = rng.uniform(-8, 8, (16, 16))
    b.log_odds[:] = rng.uniform(-8, 8, (16, 16))
    assert np.array_equal(fuse_maps(a, b).log_odds, fuse_maps(b, a).log_odds)


def test_fuse_associative_on_interior_lattice_values():
    # wire-delivered maps carry 1/1024 fixed-point values; sums inside the
    # clamp range add exactly in float64, so fusion associates bit-exactly
    rng = np.random.default_rng(5)
    for _ in range(100):
        grids = []
        for _ in range(3):
            g = OccupancyGrid(8, 8, 1.0, PARAMS)
            q = rng.integers(-3000, 3001, (8, 8))
            g.log_odds[:] = q / FIXED_POINT_SCALE
            grids.append(g)
        a, b, c = grids
        left = fuse_maps(fuse_maps(a, b), c)
        right = fuse_maps(a, fuse_maps(b, c))
        assert np.array_equal(left.log_odds, right.log_odds)


def test_fuse_lattice_mismatch_raises():
    a = OccupancyGrid(8, 8, 1.0, PARAMS)
    b = OccupancyGrid(8, 9, 1.0, PARAMS)
    with pytest.raises(ValueError):
        fuse_maps(a, b)
    c = OccupancyGrid(8, 8, 0.5, PARAMS)
    with pytest.raises(ValueError):
        fuse_maps(a, c)


def test_update_then_fuse_empty_equals_update_alone():
    room = open_room()
    state = AgentState(x=2.0, y=2.0, heading=0.1)
    s = scan(room, state, LidarConfig(ray_count=24, max_range=2.0))
    g1 = OccupancyGrid.for_world(room, PARAMS)
    update_from_scan(g1, state, s)
    fused = fuse_maps(g1, OccupancyGrid.for_world(room, PARAMS))
    assert np.array_equal(fused.log_odds, g1.log_odds)


def test_fuse_into_reports_receiver_discoveries():
    a = OccupancyGrid(4, 4, 1.0, PARAMS)
    incoming = OccupancyGrid(4, 4, 1.0, PARAMS)
    incoming.log_odds[1, 2] = 2.0
    incoming.log_odds[3, 3] = 0.1  # below epsilon: changed but not discovered
    delta = fuse_into(a, incoming)
    assert delta.discovered_count == 1
    assert a.log_odds[1, 2] == 2.0


def test_egocentric_all_unknown_is_half():
    grid = OccupancyGrid(50, 50, 0.1, PARAMS)
    ego = extract_egocentric(grid, AgentState(x=2.5, y=2.5, heading=0.0), 16)
    assert ego.window.shape == (16, 16)
    assert (ego.window == 0.5).all()


def test_egocentric_corner_padding():
    grid = OccupancyGrid(50, 50, 0.1, PARAMS)
    grid.log_odds[:] = PARAMS.l_max  # everything known-occupied
    ego = extract_egocentric(grid, AgentState(x=0.05, y=0.05, heading=0.0), 16)
    # agent at cell (0,0): rows/cols below the lattice are padding
    assert (ego.window[:8, :] == 0.5).all()
    assert (ego.window[:, :8] == 0.5).all()
    assert (ego.window[8:, 8:] > 0.99).all()


def test_egocentric_center_is_agent_cell():
    grid = OccupancyGrid(50, 50, 0.1, PARAMS)
    grid.log_odds[13, 17] = 3.0
    ego = extract_egocentric(grid, AgentState(x=1.75, y=1.35, heading=0.0), 16)
    assert ego.center_cell == (17, 13)
    assert ego.window[8, 8] == pytest.approx(float(probability(3.0)))


def test_egocentric_shift_equivariance():
    rng = np.random.default_rng(8)
    grid = OccupancyGrid(64, 64, 0.1, PARAMS)
    grid.log_odds[:] = rng.uniform(-9, 9, (64, 64))
    w = 16
    base = extract_egocentric(grid, AgentState(x=3.05, y=3.05, heading=0.0), w)
    for k in (1, 3, 5):
        moved = extract_egocentric(grid, AgentState(x=3.05 + 0.1 * k, y=3.05, heading=0.0), w)
        np.testing.assert_array_equal(moved.window[:, : w - k], base.window[:, k:])


def test_known_cells_fresh_grid_zero():
    assert known_cells(OccupancyGrid(20, 20, 0.1, PARAMS)) == 0


def test_known_cells_equals_touched_cells_after_one_scan():
    room = open_room()
    state = AgentState(x=2.0, y=2.0, heading=0.0)
    s = scan(room, state, LidarConfig(ray_count=36, max_range=2.0))
    grid = OccupancyGrid.for_world(room, PARAMS)
    delta = update_from_scan(grid, state, s)
    # one update: every touched cell moves to +-l_free/l_occ, all past epsilon
    assert known_cells(grid) == len(delta)
    assert delta.discovered_count == len(delta)


def test_known_cells_rejects_nonpositive_epsilon():
    with pytest.raises(ValueError):
        known_cells(OccupancyGrid(4, 4, 1.0, PARAMS), 0.0)


def test_logit_probability_round_trip():
    p = np.linspace(0.01, 0.99, 197)
    np.testing.assert_allclose(probability(logit(p)), p, atol=1e-12)


def test_serialization_size_and_layout():
    grid = OccupancyGrid(6, 4, 0.25, PARAMS)
    grid.log_odds[0, 0] = 1.0
    grid.log_odds[3, 5] = -2.5
    data = serialize_grid(grid)
    assert len(data) == serialized_size(6, 4) == 16 + 2 * 6 * 4
    width, height, cell_size, eps = struct.unpack_from("<IIff", data, 0)
    assert (width, height) == (6, 4)
    assert cell_size == pytest.approx(0.25)
    assert eps == pytest.approx(PARAMS.epsilon)
    values = np.frombuffer(data, dtype="<i2", offset=16).reshape(4, 6)
    assert values[0, 0] == 1024
    assert values[3, 5] == -2560


def test_serialization_round_trip_within_quantization():
    rng = np.random.default_rng(12)
    grid = OccupancyGrid(30, 20, 0.04, PARAMS)
    grid.log_odds[:] = rng.uniform(-10, 10, (20, 30))
    restored = deserialize_grid(serialize_grid(grid))
    assert restored.width == grid.width and restored.height == grid.height
    assert np.abs(restored.log_odds - grid.log_odds).max() <= 0.5 / FIXED_POINT_SCALE + 1e-12
