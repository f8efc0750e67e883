from collections import deque

import numpy as np
import pytest

from swarmexplore.world import (
    WorldError,
    build_level,
    default_level_spec,
    explorable_area,
    is_occupied,
    load_world,
    world_to_text,
)

from conftest import text_world


def reference_flood_fill(world):
    """Independent BFS count of free cells reachable from spawn 0."""
    occ = world.static_occupancy
    start = world.cell_of(*world.spawn_points[0])
    seen = {start}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if 0 <= nx < world.width_cells and 0 <= ny < world.height_cells:
                if not occ[ny, nx] and (nx, ny) not in seen:
                    seen.add((nx, ny))
                    queue.append((nx, ny))
    return len(seen)


def test_level0_is_empty_bounded_rectangle():
    world = build_level(default_level_spec(0))
    border = 3  # 0.12 m walls at 0.04 m cells
    occ = world.static_occupancy
    assert occ[:border, :].all() and occ[-border:, :].all()
    assert occ[:, :border].all() and occ[:, -border:].all()
    assert not occ[border:-border, border:-border].any()


def test_build_level_is_deterministic():
    a = build_level(default_level_spec(3))
    b = build_level(default_level_spec(3))
    assert np.array_equal(a.static_occupancy, b.static_occupancy)
    assert a.spawn_points == b.spawn_points
    assert a.explorable_cell_count == b.explorable_cell_count


def test_different_seed_changes_obstacles():
    a = build_level(default_level_spec(3, seed=0))
    b = build_level(default_level_spec(3, seed=1))
    assert not np.array_equal(a.static_occupancy, b.static_occupancy)


def test_explorable_area_monotone_across_levels():
    worlds = [build_level(default_level_spec(k)) for k in range(7)]
    areas = [explorable_area(w) for w in worlds]
    for k in range(6):
        assert areas[k + 1] >= areas[k]


@pytest.mark.parametrize("level", [0, 3, 6])
def test_explorable_area_matches_reference_bfs(level):
    world = build_level(default_level_spec(level))
    assert explorable_area(world) == reference_flood_fill(world)


def test_explorable_area_10x10_border_only():
    rows = ["#" * 10]
    for iy in range(1, 9):
        row = ["#"] + ["."] * 8 + ["#"]
        if iy == 1:
            row[1] = "S"
        rows.append("".join(row))
    rows.append("#" * 10)
    world = text_world(rows, cell_size=0.5)
    assert explorable_area(world) == 64


def test_explorable_area_degenerate_single_cell():
    rows = ["###", "#S#", "###"]
    world = text_world(rows, cell_size=0.5)
    assert explorable_area(world) == 1


def test_is_occupied_conventions():
    world = build_level(default_level_spec(0))
    assert is_occupied(world, (0, 0))
    assert not is_occupied(world, (world.width_cells // 2, world.height_cells // 2))
    assert is_occupied(world, (-1, 0))
    assert is_occupied(world, (0, world.height_cells))


@pytest.mark.parametrize("level", range(7))
def test_spawn_invariants(level):
    world = build_level(default_level_spec(level))
    assert len(world.spawn_points) == 4
    cs = world.cell_size
    r_cells = 2  # one body radius (0.08 m) in cells
    for x, y in world.spawn_points:
        ix, iy = world.cell_of(x, y)
        assert not is_occupied(world, (ix, iy))
        assert world.reachable_free[iy, ix]
        patch = world.static_occupancy[
            iy - r_cells : iy + r_cells + 1, ix - r_cells : ix + r_cells + 1
        ]
        assert not patch.any()
    del cs


def test_text_format_round_trip():
    world = build_level(default_level_spec(1))
    text = world_to_text(world)
    loaded = load_world(text)
    assert np.array_equal(loaded.static_occupancy, world.static_occupancy)
    assert loaded.cell_size == world.cell_size
    assert loaded.level_id == world.level_id
    assert set(loaded.spawn_points) == set(world.spawn_points)
    assert explorable_area(loaded) == explorable_area(world)


def test_disconnected_spawn_rejected():
    rows = [
        "#######",
        "#S..#.#",
        "#...#S#",
        "#######",
    ]
    with pytest.raises(WorldError):
        text_world(rows)


def test_open_border_rejected():
    rows = [
        "#####",
        "#S...",
        "#####",
    ]
    with pytest.raises(WorldError):
        text_world(rows)


def test_malformed_header_rejected():
    with pytest.raises(WorldError):
        load_world("5 5\n#####")


def test_build_level_loads_map_files(tmp_path):
    world = build_level(default_level_spec(1))
    path = tmp_path / "level.map"
    path.write_text(world_to_text(world))
    from_file = build_level(path)
    assert np.array_equal(from_file.static_occupancy, world.static_occupancy)
    from_text = build_level(world_to_text(world))
    assert np.array_equal(from_text.static_occupancy, world.static_occupancy)
