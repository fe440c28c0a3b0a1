import csv
import json
import os

import pytest

from imaginav.core.scene import EpisodeConfig, GeneratorConfig
from imaginav.core.world_model import CalibrationTable, NoiseConfig
from imaginav.harness.config import ConfigError, RunConfig
from imaginav.harness.suite import (MANIFEST, SuiteError, ablate, calibrate_suite, generate_suite, load_suite,
                                    load_suite_spec, mode_config, run_suite, suite_action_scales, sweep_theta)

GENERATOR = GeneratorConfig(width=8.0, height=6.0, rooms=2, landmarks=2)
EPISODES = EpisodeConfig(max_steps=6, min_goal_distance=2.0)


@pytest.fixture
def suite_dir(tmp_path):
    path = str(tmp_path / 'suite')
    generate_suite(path, 3, 11, GENERATOR, EPISODES)
    return path


@pytest.fixture
def config():
    return RunConfig().replace(sensor={'n_rays': 32})


def test_generate_suite(suite_dir):
    episodes = load_suite(suite_dir)
    assert [ep.episode_id for ep, _ in episodes] == ['ep0000', 'ep0001', 'ep0002']
    for episode, seed in episodes:
        assert episode.geodesic_distance > 0
        assert episode.max_steps == 6
        assert seed >= 0


def test_generation_is_deterministic(tmp_path):
    a = generate_suite(str(tmp_path / 'a'), 2, 5, GENERATOR, EPISODES)
    b = generate_suite(str(tmp_path / 'b'), 2, 5, GENERATOR, EPISODES)
    assert a == b
    for entry in a:
        with open(tmp_path / 'a' / entry['file']) as fa, open(tmp_path / 'b' / entry['file']) as fb:
            assert fa.read() == fb.read()


def test_empty_suites(tmp_path):
    with pytest.raises(SuiteError):
        generate_suite(str(tmp_path / 'none'), 0, 1)
    with pytest.raises(SuiteError):
        load_suite(str(tmp_path))
    (tmp_path / MANIFEST).write_text(json.dumps({'format': 'imaginav.suite', 'version': 1, 'episodes': []}))
    with pytest.raises(SuiteError):
        load_suite(str(tmp_path))


def test_load_suite_spec(tmp_path):
    path = tmp_path / 'spec.json'
    doc = {'generator': {'rooms': 2, 'vocabulary': ['tv', 'bed']}, 'episode': {'max_steps': 9}}
    path.write_text(json.dumps(doc))
    generator, episode = load_suite_spec(str(path))
    assert generator.rooms == 2
    assert generator.vocabulary == ('tv', 'bed')
    assert episode.max_steps == 9
    path.write_text(json.dumps({'scenes': {}}))
    with pytest.raises(ConfigError):
        load_suite_spec(str(path))


def test_run_suite(suite_dir, config, tmp_path):
    report = run_suite(suite_dir, config, log_dir=str(tmp_path / 'logs'))
    assert len(report.rows) == 3
    assert report.config_hash == config.digest()
    agg = report.aggregates
    assert 0.0 <= agg['SPL'] <= agg['SR'] <= 1.0
    assert sorted(os.listdir(tmp_path / 'logs')) == ['ep0000.jsonl', 'ep0001.jsonl', 'ep0002.jsonl']


def test_runs_are_reproducible(suite_dir, config):
    assert run_suite(suite_dir, config).content_hash() == run_suite(suite_dir, config).content_hash()


def test_parallel_run_matches_serial(suite_dir, config):
    serial = run_suite(suite_dir, config, parallelism=1)
    parallel = run_suite(suite_dir, config, parallelism=2)
    assert serial.content_hash() == parallel.content_hash()


def test_mode_config():
    config = RunConfig()
    assert mode_config(config, 'base-only').fusion.lambda1 == 0.0
    assert mode_config(config, 'base-only').fusion.lambda2 == 0.0
    assert mode_config(config, '+prior').fusion.lambda2 == config.fusion.lambda2
    assert mode_config(config, '+imagination').fusion.lambda2 == 0.0
    assert not mode_config(config, '+imagination').planner.value_map
    assert mode_config(config, 'base-only').planner.value_map
    assert mode_config(config, 'full') == config
    with pytest.raises(SuiteError):
        mode_config(config, 'everything')


def test_ablate_writes_csv(suite_dir, config, tmp_path):
    out = tmp_path / 'ablation.csv'
    reports = ablate(suite_dir, config, ('base-only', 'full'), str(out))
    assert list(reports) == ['base-only', 'full']
    with open(out, newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['mode', 'TL', 'NE', 'SR', 'SPL']
    assert [r[0] for r in rows[1:]] == ['base-only', 'full']


def test_calibrate_suite(suite_dir, config):
    episodes = load_suite(suite_dir)
    assert calibrate_suite(episodes, config) is None
    assert calibrate_suite(episodes, config.replace(world_model='noisy')) is None
    table = calibrate_suite(episodes, config.replace(world_model='noisy', noise={'sigma_d': 0.3}))
    assert isinstance(table, CalibrationTable)
    assert not table.degenerate


def test_sweep_theta(suite_dir, config, tmp_path):
    out = tmp_path / 'sweep.csv'
    rows = sweep_theta(suite_dir, [0.0, 1.0], config, NoiseConfig(sigma_d=0.3), str(out))
    assert [r['theta'] for r in rows] == [0.0, 1.0]
    assert rows[1]['fallback_rate'] == 0.0
    assert rows[0]['fallback_rate'] >= rows[1]['fallback_rate']
    assert out.exists()
    with pytest.raises(SuiteError):
        sweep_theta(suite_dir, [], config)


def test_zero_fusion_weights_match_disabled_value(suite_dir, config):
    zero = run_suite(suite_dir, config.replace(fusion={'lambda1': 0.0, 'lambda2': 0.0}))
    disabled = run_suite(suite_dir, config.replace(planner={'value_enabled': False}))
    assert [r.to_dict() for r in zero.rows] == [r.to_dict() for r in disabled.rows]


def test_suite_action_scales(suite_dir, config):
    episodes = load_suite(suite_dir)
    scales = suite_action_scales(episodes, config)
    assert len(scales) == 3
    assert all(s > 0 for s in scales)
    assert suite_action_scales(episodes, config) == scales
    assert suite_action_scales(list(reversed(episodes)), config) == pytest.approx(scales)
