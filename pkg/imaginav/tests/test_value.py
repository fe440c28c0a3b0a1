import math

import numpy as np
import pytest

from imaginav.core.geometry import Pose
from imaginav.core.scene import NONE, Observation, SensorConfig, sense
from imaginav.core.value import (CueWeights, EgoGrid, FusionParams, aggregate, alignment_scores, fov_wedge_mask,
                                 frame_confidence, frame_score, gate, imagination_to_value, peak_distance,
                                 prior_map, prior_weights, sample_path, smooth, splat)
from imaginav.core.world_model import ImaginedFrame, Rollout, RolloutRequest, oracle_rollout

ORIGIN = Pose(0.0, 0.0, 0.0)


def frame(depth, semantic=None, sigma=None, pose=ORIGIN, tau=1):
    depth = np.asarray(depth, dtype=np.float64)
    semantic = np.full(depth.shape, NONE) if semantic is None else np.asarray(semantic)
    sigma = np.zeros(depth.shape) if sigma is None else np.asarray(sigma, dtype=np.float64)
    return ImaginedFrame(depth, semantic, pose, sigma, tau)


def test_weights_validation():
    with pytest.raises(ValueError):
        CueWeights(w_trav=-0.1)
    with pytest.raises(ValueError):
        FusionParams(theta=1.5)
    with pytest.raises(ValueError):
        FusionParams(gamma=0.0)


def test_alignment_scores():
    np.testing.assert_array_equal(alignment_scores(['tv', 'sofa', 'bed'], ('sofa', 'tv')), [1.0, 0.5, 0.0])
    np.testing.assert_array_equal(alignment_scores(['tv', 'sofa'], ()), [0.0, 0.0])


def test_flat_confidence_for_constant_frame():
    conf = frame_confidence(frame(np.full(6, 12.0)), ('tv',), CueWeights())
    assert np.ptp(conf) == 0.0
    assert 0.0 <= conf[0] <= 1.0


def test_rays_without_instruction_tokens_carry_no_value():
    depth = np.array([0.3, 2.0, 6.0, 12.0])
    conf = frame_confidence(frame(depth, [NONE, 'sofa', NONE, 'bed']), ('tv',), CueWeights())
    np.testing.assert_array_equal(conf, 0.0)
    assert frame_confidence(frame(depth, np.full(4, 'tv')), ('tv',), CueWeights())[1:].min() > 0.0


def test_goal_ray_is_strictly_maximal():
    conf = frame_confidence(frame(np.full(4, 5.0), [NONE, 'tv', NONE, 'sofa']), ('sofa', 'tv'), CueWeights())
    assert np.argmax(conf) == 1
    assert conf[1] > conf[3] > conf[0]


def test_confidence_non_increasing_in_sigma():
    sigma = np.array([0.0, 0.1, 0.2, 0.4, 0.8, 1.6])
    conf = frame_confidence(frame(np.full(6, 6.0), np.full(6, 'tv'), sigma), ('tv',), CueWeights())
    assert np.all(np.diff(conf) <= 0.0)
    assert conf[-1] < conf[0]


def test_confidence_extremes_map_to_unit_range():
    weights = CueWeights()
    conf = frame_confidence(frame([0.0, 12.0], ['none', 'tv'], [5.0, 0.0]), ('tv',), weights)
    assert conf[0] == pytest.approx(0.0, abs=1e-12)
    assert conf[1] == pytest.approx(1.0)


def test_near_obstacle_penalty():
    conf = frame_confidence(frame([0.4, 0.6], ['tv', 'tv']), ('tv',), CueWeights(w_trav=0.0))
    assert 0.0 < conf[0] < conf[1]


def test_splat_at_cell_center():
    grid = EgoGrid.zeros(8, 8.0)
    out = splat(frame([2.0]), [0.7], grid, ORIGIN, np.zeros(1))
    assert out.values[6, 4] == pytest.approx(0.7)
    assert out.values.sum() == pytest.approx(0.7)
    assert not grid.values.any()


def test_splat_at_midpoint_of_four_centers():
    out = splat(frame([2.0], pose=Pose(0.5, 0.5, 0.0)), [1.0], EgoGrid.zeros(8, 8.0), ORIGIN, np.zeros(1))
    np.testing.assert_allclose(out.values[6:8, 4:6], 0.25)
    assert out.values.sum() == pytest.approx(1.0)


def test_splat_drops_points_outside_window():
    grid = EgoGrid.zeros()
    out = splat(frame([13.0]), [1.0], grid, ORIGIN, np.zeros(1))
    np.testing.assert_array_equal(out.values, grid.values)


def test_splat_drops_masked_points():
    mask = np.ones((8, 8), dtype=bool)
    mask[6, 4] = False
    out = splat(frame([2.0]), [1.0], EgoGrid.zeros(8, 8.0, mask), ORIGIN, np.zeros(1))
    assert not out.values.any()


def test_splat_keeps_running_maximum():
    grid = EgoGrid.zeros(8, 8.0)
    out = splat(frame([2.0, 2.0]), [0.3, 0.6], grid, ORIGIN, np.zeros(2))
    assert out.values[6, 4] == pytest.approx(0.6)
    out = splat(frame([2.0, 2.0]), [0.3, 0.6], grid, ORIGIN, np.zeros(2), additive=True)
    assert out.values[6, 4] == pytest.approx(0.9)


def test_splat_uses_the_agent_frame():
    out = splat(frame([2.0], pose=Pose(1.0, 2.0, math.pi / 2)), [1.0], EgoGrid.zeros(8, 8.0), Pose(1.0, 2.0, 0.0),
                np.zeros(1))
    assert out.values[4, 6] == pytest.approx(1.0)


def test_fan_splat_ramps_up_to_the_evidence():
    out = splat(frame([3.0]), [1.0], EgoGrid.zeros(8, 8.0), ORIGIN, np.zeros(1), fan=True)
    np.testing.assert_allclose(out.values[5:8, 4], [1.0 / 3.0, 2.0 / 3.0, 1.0])
    assert out.values[7, 4] == out.values.max()


def test_smooth_single_hot_cell():
    values = np.zeros((12, 12))
    values[5, 5] = 1.0
    out = smooth(EgoGrid(values, window=12.0)).values
    assert (out[4:7, 4:7] > 0).all()
    assert out[5, 5] == out.max()


def test_smooth_uniform_grid_unchanged():
    out = smooth(EgoGrid(np.full((12, 12), 0.4), window=12.0)).values
    np.testing.assert_allclose(out, 0.4)


def test_smooth_distant_cells_do_not_interact():
    a = np.zeros((12, 12))
    b = np.zeros((12, 12))
    a[3, 5] = 1.0
    b[8, 5] = 0.5
    both = smooth(EgoGrid(a + b, window=12.0)).values
    separate = smooth(EgoGrid(a, window=12.0)).values + smooth(EgoGrid(b, window=12.0)).values
    np.testing.assert_allclose(both, separate)


def test_smooth_respects_mask():
    mask = np.ones((12, 12), dtype=bool)
    mask[:, :3] = False
    values = np.zeros((12, 12))
    values[5, 3] = 1.0
    out = smooth(EgoGrid(values, mask, 12.0)).values
    assert not out[:, :3].any()


def test_aggregate_single_grid_is_identity():
    values = np.random.default_rng(0).uniform(0.0, 1.0, (10, 10))
    values[0, 0] = 0.0
    out = aggregate([(1, EgoGrid(values, window=1.0))], FusionParams(gamma=1.0))
    np.testing.assert_array_equal(out.values, values)


def test_aggregate_two_grids_close_to_max():
    a = EgoGrid(np.full((4, 4), 0.2), window=1.0)
    b = EgoGrid(np.full((4, 4), 0.9), window=1.0)
    out = aggregate([(1, a), (2, b)], FusionParams(gamma=1.0, beta=64.0)).values
    assert np.all(out >= 0.9)
    assert np.all(out <= 0.9 + math.log(2.0) / 64.0)


def test_aggregate_discount():
    out = aggregate([(2, EgoGrid(np.ones((4, 4)), window=1.0))], FusionParams(gamma=0.5))
    np.testing.assert_allclose(out.values, 0.25)


def test_aggregate_empty_cells_stay_empty():
    a = np.zeros((4, 4))
    a[1, 1] = 0.5
    out = aggregate([(1, EgoGrid(a, window=1.0)), (2, EgoGrid(np.zeros((4, 4)), window=1.0))],
                    FusionParams(gamma=1.0)).values
    assert out[1, 1] == 0.5
    assert out.sum() == 0.5


@pytest.mark.parametrize('beta', [8.0, 64.0])
def test_aggregate_log_sum_exp_bounds(beta):
    rng = np.random.default_rng(int(beta))
    terms = rng.uniform(0.0, 0.8, (3, 20, 20))
    out = aggregate([(1, EgoGrid(t, window=1.0)) for t in terms], FusionParams(gamma=1.0, beta=beta)).values
    peak = terms.max(axis=0)
    assert np.all(out >= peak - 1e-12)
    assert np.all(out <= peak + math.log(3.0) / beta + 1e-12)


def test_aggregate_needs_terms():
    with pytest.raises(ValueError):
        aggregate([], FusionParams())


def test_gate():
    grid = EgoGrid(np.full((4, 4), 0.5), window=1.0)
    assert not gate(grid, 0.7, 0.6).values.any()
    assert gate(grid, 0.6, 0.6) is grid
    assert gate(grid, 1.0, 1.0) is grid


def test_prior_weights_softmax():
    obs = Observation(np.full(4, 3.0), np.array(['tv', NONE, NONE, NONE]), ORIGIN, ORIGIN)
    weights = prior_weights(obs, ('tv',), 1.0)
    assert weights[0] == pytest.approx(math.e / (math.e + 3.0))
    assert weights.sum() == pytest.approx(1.0)


def test_prior_weights_uniform_without_tokens():
    obs = Observation(np.full(4, 3.0), np.full(4, NONE), ORIGIN, ORIGIN)
    np.testing.assert_allclose(prior_weights(obs, ('tv',), 0.1), 0.25)


def test_prior_map_peaks_at_goal(box_scene):
    sensor = SensorConfig()
    obs = sense(box_scene, Pose(5.0, 5.0, 0.0), sensor)
    prior = prior_map(obs, ('tv',), EgoGrid.zeros(), 0.05, sensor)
    values = prior.values
    assert values.min() >= 0.0 and values.max() <= 1.0
    assert not values[:38].any()
    xs, ys = prior.cell_centers()
    i, j = np.unravel_index(np.argmax(values), values.shape)
    assert math.hypot(xs[i, j] - 2.7, ys[i, j]) < 0.5


def test_sample_path():
    ones = EgoGrid(np.ones((80, 80)))
    poses = [Pose(0.5 * k, 0.0, 0.0) for k in range(1, 5)]
    assert sample_path(EgoGrid.zeros(), poses, 0.9, ORIGIN) == 0.0
    assert sample_path(ones, poses, 1.0, ORIGIN) == pytest.approx(4.0)
    assert sample_path(ones, poses, 0.9, ORIGIN) == pytest.approx(3.0951)
    assert sample_path(ones, poses[:3] + [Pose(20.0, 0.0, 0.0)], 1.0, ORIGIN) == pytest.approx(3.0)


def test_peak_distance():
    values = np.zeros((80, 80))
    assert peak_distance(EgoGrid(values)) == math.inf
    values[50, 40] = 0.8
    values[30, 40] = 0.8
    values[70, 40] = 0.8
    assert peak_distance(EgoGrid(values)) == pytest.approx(1.5)


def test_fov_wedge_mask():
    mask = fov_wedge_mask([ORIGIN], math.pi / 2, 4.0)
    assert mask[60, 40]
    assert mask[40, 40]
    assert not mask[20, 40]
    assert not mask[40, 70]
    assert not mask[79, 40]


def test_imagination_to_value(box_scene):
    sensor = SensorConfig(n_rays=64)
    agent = Pose(4.0, 5.0, 0.0)
    poses = [Pose(4.5, 5.0, 0.0), Pose(5.0, 5.0, 0.0), Pose(5.5, 5.0, 0.0), Pose(6.0, 5.0, 0.0)]
    req = RolloutRequest((sense(box_scene, agent, sensor),), ('tv',), poses)
    rollout = oracle_rollout(box_scene, req, sensor)
    out = imagination_to_value(rollout, ('tv',), agent, sensor, CueWeights(), FusionParams())
    assert not out.gated
    assert out.grid is out.ungated
    assert 0.0 < out.grid.values.max() <= 1.0
    assert not out.grid.values[~out.grid.fov_mask].any()

    doubtful = Rollout(rollout.frames, 0.7)
    gated = imagination_to_value(doubtful, ('tv',), agent, sensor, CueWeights(), FusionParams())
    assert gated.gated
    assert not gated.grid.values.any()
    assert gated.ungated.values.max() > 0.0


def test_splat_conserves_weight():
    rng = np.random.default_rng(8)
    n = 10000
    grid = EgoGrid.zeros()
    lo = -grid.half * grid.cell
    hi = (grid.side - 1 - grid.half) * grid.cell
    points = rng.uniform(lo, hi, (n, 2))
    depth = np.hypot(points[:, 0], points[:, 1])
    angles = np.arctan2(points[:, 1], points[:, 0])
    out = splat(frame(depth), np.ones(n), grid, ORIGIN, angles, additive=True)
    assert out.values.sum() == pytest.approx(n, abs=1e-6)


def test_frame_score(box_scene):
    sensor = SensorConfig(n_rays=64)
    agent = Pose(4.0, 5.0, 0.0)
    poses = [Pose(4.5, 5.0, 0.0), Pose(5.0, 5.0, 0.0), Pose(5.5, 5.0, 0.0), Pose(6.0, 5.0, 0.0)]
    rollout = oracle_rollout(box_scene, RolloutRequest((sense(box_scene, agent, sensor),), ('tv',), poses), sensor)
    weights = CueWeights()
    params = FusionParams()
    out = frame_score(rollout, ('tv',), weights, params)
    expected = sum(params.gamma ** f.tau * frame_confidence(f, ('tv',), weights).max() for f in rollout.frames)
    assert out.score == pytest.approx(expected)
    assert out.score > 0.0
    assert not out.gated
    assert out.path_value(poses, params.gamma, agent) == out.score

    assert frame_score(rollout, ('bed',), weights, params).score == 0.0
    gated = frame_score(Rollout(rollout.frames, 0.7), ('tv',), weights, params)
    assert gated.gated
    assert gated.score > 0.0
    assert gated.path_value(poses, params.gamma, agent) == 0.0
