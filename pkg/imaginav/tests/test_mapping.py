import math

import numpy as np
import pytest
from scipy.sparse import csgraph

from imaginav.core.geometry import PlatformLimits, Pose, check_feasible
from imaginav.core.mapping import (FREE, FRONTIER, OCCUPIED, ROTATION, STOP, UNKNOWN, MappingConfig, OccupancyGrid,
                                   base_score, candidates, extract_frontiers, grid_graph, rotation_candidate,
                                   stop_candidate, update_map)
from imaginav.core.scene import WALL, Observation, SensorConfig, sense


def scanned(scene, pose, sensor=None):
    sensor = sensor or SensorConfig()
    grid = OccupancyGrid.around(pose, 6.0)
    return update_map(grid, sense(scene, pose, sensor), sensor)


def corridor_grid():
    """Occupied border, free block on the left, unknown block on the right."""
    log_odds = np.full((10, 10), 1.0)
    log_odds[1:5, 1:9] = -1.0
    log_odds[5:9, 1:9] = 0.0
    return OccupancyGrid(MappingConfig(), (0.0, 0.0), log_odds=log_odds)


def test_around():
    grid = OccupancyGrid.around(Pose(2.0, 3.0, 0.0), 6.0)
    assert grid.shape == (80, 80)
    assert grid.origin == pytest.approx((-4.0, -3.0))
    assert (grid.states() == UNKNOWN).all()
    assert grid.cell_center(0, 0) == pytest.approx((-4.0 + 0.5 * grid.resolution, -3.0 + 0.5 * grid.resolution))
    assert grid.world_to_cell(*grid.cell_center(10, 20)) == (10, 20)


def test_update_map_marks_free_and_occupied(box_scene):
    grid = scanned(box_scene, Pose(5.0, 5.0, 0.0))
    states = grid.states()
    assert states[grid.world_to_cell(6.0, 5.0)] == FREE
    assert states[grid.world_to_cell(5.0, 5.0)] == FREE
    assert states[grid.world_to_cell(10.0, 3.58)] == OCCUPIED
    i, j = grid.world_to_cell(7.7, 5.0)
    assert (states[i - 1:i + 2, j - 1:j + 2] == OCCUPIED).any()
    assert states[grid.world_to_cell(5.0, 8.0)] == UNKNOWN


def test_update_map_mirror_symmetry():
    sensor = SensorConfig(n_rays=9)
    depth = np.array([3.0, 3.35, 3.7, 4.15, 4.4, 4.15, 3.7, 3.35, 3.0])
    pose = Pose(0.0, 0.0, 0.0)
    obs = Observation(depth, np.full(9, WALL), pose, pose)
    grid = OccupancyGrid(MappingConfig(), (-6.0, -6.075), (81, 81))
    out = update_map(grid, obs, sensor)
    assert out.shape == (81, 81)
    assert (out.states() == OCCUPIED).any()
    np.testing.assert_array_equal(out.log_odds, out.log_odds[:, ::-1])


def test_update_map_leaves_input_untouched(box_scene):
    grid = OccupancyGrid.around(Pose(5.0, 5.0, 0.0), 6.0)
    update_map(grid, sense(box_scene, Pose(5.0, 5.0, 0.0), SensorConfig()), SensorConfig())
    assert not grid.log_odds.any()


def test_max_range_rays_mark_no_obstacle(empty_scene):
    grid = scanned(empty_scene, Pose(10.0, 10.0, 0.0), SensorConfig(d_max=4.0))
    states = grid.states()
    assert not (states == OCCUPIED).any()
    assert states[grid.world_to_cell(12.0, 10.0)] == FREE


def test_log_odds_are_clamped(box_scene):
    sensor = SensorConfig()
    pose = Pose(5.0, 5.0, 0.0)
    grid = OccupancyGrid.around(pose, 6.0)
    obs = sense(box_scene, pose, sensor)
    for _ in range(20):
        grid = update_map(grid, obs, sensor)
    assert grid.log_odds.max() == pytest.approx(grid.config.l_max)
    assert grid.log_odds.min() == pytest.approx(-grid.config.l_max)


def test_grid_grows_and_keeps_content(box_scene):
    grid = scanned(box_scene, Pose(5.0, 5.0, 0.0))
    before = grid.states()[grid.world_to_cell(6.0, 5.0)]
    grid.ensure_contains(-20.0, -20.0, 1.0, 1.0)
    assert grid.origin[0] <= -20.0 and grid.origin[1] <= -20.0
    assert grid.states()[grid.world_to_cell(6.0, 5.0)] == before
    assert (grid.shape[0] - 80) % grid.config.grow_chunk == 0


def test_grid_growth_warning():
    grid = OccupancyGrid(MappingConfig(grow_chunk=2100))
    with pytest.warns(UserWarning):
        grid.ensure_contains(0.0, 0.0, 1.0, 1.0)


def test_frontier_extraction():
    frontiers = extract_frontiers(corridor_grid())
    assert len(frontiers) == 1
    frontier = frontiers[0]
    assert frontier.size == 8
    assert set(frontier.cells[:, 0]) == {4}
    assert frontier.centroid == pytest.approx((4.5 * 0.15, 5.0 * 0.15))


def test_small_frontiers_are_dropped():
    log_odds = np.full((10, 10), 1.0)
    log_odds[1:5, 1:9] = -1.0
    log_odds[5, 1:3] = 0.0
    log_odds[5, 5:9] = 0.0
    frontiers = extract_frontiers(OccupancyGrid(MappingConfig(), log_odds=log_odds))
    assert [f.size for f in frontiers] == [4]


def test_frontiers_sorted_by_size():
    log_odds = np.full((12, 12), -1.0)
    log_odds[0, :] = 1.0
    log_odds[-1, :] = 1.0
    log_odds[:, 0] = 1.0
    log_odds[:, -1] = 1.0
    log_odds[0, 2:5] = 0.0
    log_odds[-1, 2:8] = 0.0
    frontiers = extract_frontiers(OccupancyGrid(MappingConfig(), log_odds=log_odds))
    assert [f.size for f in frontiers] == [6, 3]


def test_frontiers_partition_the_frontier_cells(box_scene):
    grid = scanned(box_scene, Pose(5.0, 5.0, 0.3))
    frontiers = extract_frontiers(grid)
    assert frontiers
    cells = [tuple(c) for f in frontiers for c in f.cells]
    assert len(cells) == len(set(cells))
    states = grid.states()
    assert all(states[c] == FREE for c in cells)


def test_grid_graph_respects_corners():
    graph = grid_graph(np.ones((2, 2)), np.zeros((2, 2), dtype=bool), 1.0)
    dist = csgraph.dijkstra(graph, directed=False, indices=0)
    assert dist[3] == pytest.approx(math.sqrt(2.0))
    blocked = np.array([[False, False], [True, False]])
    dist = csgraph.dijkstra(grid_graph(np.ones((2, 2)), blocked, 1.0), directed=False, indices=0)
    assert dist[3] == pytest.approx(2.0)
    assert np.isinf(dist[2])


def test_grid_graph_weights_average_costs():
    graph = grid_graph(np.array([[1.0, 3.0]]), np.zeros((1, 2), dtype=bool), 0.5)
    assert graph[0, 1] == pytest.approx(1.0)


def test_base_score():
    cfg = MappingConfig()
    assert base_score(stop_candidate(Pose(0, 0, 0))) == -math.inf
    assert base_score(stop_candidate(Pose(0, 0, 0)), cfg, 100.0) == 100.0
    rotation = rotation_candidate(Pose(0, 0, 0), math.pi / 2, 4, PlatformLimits())
    assert base_score(rotation, cfg) == cfg.b_rot


def test_frontier_base_score(box_scene):
    grid = scanned(box_scene, Pose(5.0, 5.0, 0.0))
    cands = [c for c in candidates(grid, Pose(5.0, 5.0, 0.0), 8, PlatformLimits(), 4) if c.kind == FRONTIER]
    assert cands
    for cand in cands:
        expected = math.log1p(cand.target_frontier.size) - 0.25 * cand.path_cost
        assert base_score(cand, MappingConfig()) == pytest.approx(expected)
    scores = [base_score(c) for c in cands]
    assert scores == sorted(scores, reverse=True)


def test_path_cost_is_the_geometric_length():
    odom = Pose(0.225, 0.825, 0.0)
    cands = [c for c in candidates(corridor_grid(), odom, 8, PlatformLimits(), 4) if c.kind == FRONTIER]
    assert len(cands) == 1
    assert cands[0].path_cost == pytest.approx(0.45)


def test_rotation_candidate():
    cand = rotation_candidate(Pose(1.0, 1.0, 0.0), math.pi / 2, 4, PlatformLimits())
    assert cand.kind == ROTATION
    assert len(cand.actions) == 4
    assert cand.actions[0].dtheta == pytest.approx(math.pi / 2)
    assert all(a.dtheta == 0.0 for a in cand.actions[1:])
    assert cand.poses[-1].theta == pytest.approx(math.pi / 2)
    assert (cand.poses[-1].x, cand.poses[-1].y) == (1.0, 1.0)


def test_candidates_structure(box_scene):
    odom = Pose(5.0, 5.0, 0.0)
    limits = PlatformLimits()
    cands = candidates(scanned(box_scene, odom), odom, 8, limits, 4)
    assert len(cands) <= 8
    assert cands[-1].kind == STOP
    assert sum(c.is_stop for c in cands) == 1
    for cand in cands[:-1]:
        assert len(cand.actions) == 4
        assert len(cand.poses) == 4
        assert all(check_feasible(a, limits) for a in cand.actions)


def test_candidates_are_deterministic(box_scene):
    odom = Pose(5.0, 5.0, 0.0)
    grid = scanned(box_scene, odom)
    a = candidates(grid, odom, 8, PlatformLimits(), 4)
    b = candidates(grid, odom, 8, PlatformLimits(), 4)
    assert [c.actions for c in a] == [c.actions for c in b]


def test_candidates_without_frontiers():
    odom = Pose(0.0, 0.0, 0.0)
    grid = OccupancyGrid.around(odom, 2.0)
    cands = candidates(grid, odom, 8, PlatformLimits(), 4)
    assert [c.kind for c in cands] == [ROTATION] * 4 + [STOP]
    assert [c.kind for c in candidates(grid, odom, 1, PlatformLimits(), 4)] == [ROTATION]
    with pytest.raises(ValueError):
        candidates(grid, odom, 0, PlatformLimits(), 4)


def test_candidates_padded_up_to_k(box_scene):
    odom = Pose(5.0, 5.0, 0.0)
    cands = candidates(scanned(box_scene, odom), odom, 3, PlatformLimits(), 4)
    assert len(cands) == 3
    assert cands[-1].is_stop


def test_pgm_rendering():
    image = corridor_grid().to_pgm_array()
    assert image.dtype == np.uint8
    assert set(np.unique(image)) == {0, 128, 255}
