"""imaginav module containing suite generation and the suite-level experiment drivers.

A suite is a directory of versioned episode documents plus ``manifest.json``,
which pins every seed: the scene seed inside each episode and the per-episode
run seed that drives actuation, odometry and world-model noise.
"""

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..core import mapping
from ..core.geometry import action_scales, embed_actions
from ..core.planner import Planner, run_episode
from ..core.scene import (Episode, EpisodeConfig, GenerationError, GeneratorConfig, generate_episode,
                          generate_scene, sense)
from ..core.world_model import CalibrationTable, NoisyOracleWorldModel, OracleWorldModel, RolloutRequest
from .config import ConfigError
from .metrics import GeodesicOracle, SuiteReport, compute_metrics


logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'
SUITE_FORMAT = 'imaginav.suite'
SUITE_VERSION = 1
MAX_ATTEMPTS = 50
ABLATION_MODES = ('base-only', '+prior', '+imagination', 'full')
CSV_COLUMNS = ('TL', 'NE', 'SR', 'SPL')


class SuiteError(ValueError):
    """Raised for missing, empty or malformed suites."""


def load_suite_spec(path):
    """Reads a suite specification: ``{"generator": {...}, "episode": {...}}``, both optional."""
    with open(path, encoding='utf-8') as f:
        data = json.load(f)
    unknown = sorted(set(data) - {'generator', 'episode'})
    if unknown:
        raise ConfigError(f'Unknown suite specification keys: {", ".join(unknown)}.')
    try:
        generator = data.get('generator', {})
        if 'vocabulary' in generator:
            generator = dict(generator, vocabulary=tuple(generator['vocabulary']))
        return GeneratorConfig(**generator), EpisodeConfig(**data.get('episode', {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f'Invalid suite specification: {e}') from e


def generate_suite(out_dir, n, seed, generator=None, episode_cfg=None):
    """Generates ``n`` episodes with reachable goals into ``out_dir``.

    Episode ``i`` draws from the stream seeded by ``(seed, i)``; scene layouts
    that cannot be realized and unreachable goals are redrawn.

    Returns:
        list of dict: the manifest entries
    """
    if n < 1:
        raise SuiteError('A suite needs at least one episode.')
    generator = generator or GeneratorConfig()
    episode_cfg = episode_cfg or EpisodeConfig()
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(n):
        rng = np.random.default_rng([int(seed), i])
        episode_id = f'ep{i:04d}'
        for _ in range(MAX_ATTEMPTS):
            try:
                scene = generate_scene(generator, int(rng.integers(2 ** 31)))
                episode = generate_episode(scene, rng, episode_cfg, episode_id)
            except GenerationError as e:
                logger.debug('Redrawing %s: %s', episode_id, e)
                continue
            geodesic = GeodesicOracle(scene).distance((episode.start.x, episode.start.y), episode.goal_position)
            if np.isfinite(geodesic):
                break
        else:
            raise SuiteError(f'Could not generate a reachable episode {episode_id} in {MAX_ATTEMPTS} attempts.')
        data = episode.to_dict()
        data['geodesic_distance'] = float(geodesic)
        filename = f'{episode_id}.json'
        with open(os.path.join(out_dir, filename), 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=1)
        entries.append({'id': episode_id, 'file': filename, 'seed': int(rng.integers(2 ** 31))})
    manifest = {'format': SUITE_FORMAT, 'version': SUITE_VERSION, 'seed': int(seed), 'episodes': entries}
    with open(os.path.join(out_dir, MANIFEST), 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=1)
    logger.info('Generated %d episodes into %s.', n, out_dir)
    return entries


def load_suite(suite_dir):
    """Reads the episodes of a suite.

    Returns:
        list of tuple: (Episode, run seed) in manifest order
    """
    path = os.path.join(suite_dir, MANIFEST)
    try:
        with open(path, encoding='utf-8') as f:
            manifest = json.load(f)
    except OSError as e:
        raise SuiteError(f'Cannot read suite manifest {path}: {e}') from e
    if manifest.get('format') != SUITE_FORMAT or manifest.get('version') != SUITE_VERSION:
        raise SuiteError(f'{path} is not an imaginav suite manifest of a supported version.')
    if not manifest.get('episodes'):
        raise SuiteError(f'Suite {suite_dir} holds no episodes.')
    out = []
    for entry in manifest['episodes']:
        with open(os.path.join(suite_dir, entry['file']), encoding='utf-8') as f:
            out.append((Episode.from_dict(json.load(f)), int(entry['seed'])))
    return out


def build_world_model(episode, config, seed, calibration=None):
    if config.world_model == 'oracle':
        return OracleWorldModel(episode.scene, config.sensor, config.cues.sigma_ceiling)
    model = NoisyOracleWorldModel(episode.scene, config.noise, seed, config.sensor, config.cues.sigma_ceiling)
    model.calibration = calibration
    return model


def build_planner(episode, config, seed, calibration=None, scales=None):
    return Planner(build_world_model(episode, config, seed, calibration), config.sensor, config.limits,
                   config.fusion, config.planner, config.cues, config.mapping, scales)


def start_candidates(episode, config):
    """The first observation and the moving candidates proposed at the episode start."""
    pcfg = config.planner
    obs = sense(episode.scene, episode.start, config.sensor)
    grid = mapping.update_map(mapping.OccupancyGrid.around(episode.start, pcfg.map_radius, config.mapping), obs,
                              config.sensor)
    cands = [c for c in mapping.candidates(grid, episode.start, pcfg.k, config.limits, pcfg.horizon)
             if not c.is_stop]
    return obs, cands


def suite_action_scales(episodes, config):
    """Action-embedding scales over the start candidates of every episode in a suite.

    Returns None when no episode proposes a moving candidate.
    """
    actions = [a for episode, _ in episodes for c in start_candidates(episode, config)[1] for a in c.actions]
    if not actions:
        return None
    scales = action_scales(actions)
    logger.debug('Suite action scales %s from %d actions.', scales, len(actions))
    return scales


def calibration_requests(episode, config, scales=None):
    """Rollout requests for every candidate proposed at the episode start."""
    pcfg = config.planner
    obs, cands = start_candidates(episode, config)
    if scales is None:
        scales = action_scales([a for c in cands for a in c.actions])
    return [RolloutRequest((obs,), episode.instruction, c.poses, pcfg.decode_stride,
                           embed_actions(c.actions, scales), (0, idx)) for idx, c in enumerate(cands)]


def calibrate_suite(episodes, config, scales=None):
    """Pools the raw uncertainties of the first ``calibration_episodes`` episodes into one table.

    Returns None for the oracle and for a noiseless noisy oracle, which report exactly zero uncertainty.
    """
    if config.world_model != 'noisy' or config.noise.is_noiseless or config.calibration_episodes == 0:
        return None
    raw = []
    for episode, seed in episodes[:config.calibration_episodes]:
        model = build_world_model(episode, config, seed)
        raw.extend(model.raw_uncertainty(req) for req in calibration_requests(episode, config, scales))
    if not raw:
        return None
    table = CalibrationTable(raw)
    logger.info('Calibrated rollout uncertainty on %d rollouts.', len(raw))
    return table


def evaluate_episode(episode, seed, config, calibration=None, with_log=False, scales=None):
    """Runs one episode and scores it.

    Returns:
        tuple: (EpisodeResult, trajectory log list or None)
    """
    log = [] if with_log else None
    planner = build_planner(episode, config, seed, calibration, scales)
    trace = run_episode(episode, planner, seed, config.motion_noise, log)
    result = compute_metrics(episode, trace.final_pose, trace.tl, trace.stop_issued, steps=trace.steps,
                             collisions=trace.collisions, seed=seed,
                             counters=(trace.gated_scorings, trace.scorings, trace.gated_steps))
    return result, log


def _evaluate_job(job):
    return job[0].episode_id, evaluate_episode(*job)


def write_log(path, log):
    with open(path, 'w', encoding='utf-8') as f:
        for record in log:
            f.write(json.dumps(record, sort_keys=True) + '\n')


def run_suite(suite_dir, config, parallelism=None, log_dir=None, label=''):
    """Runs every episode of a suite and aggregates the results.

    Episodes are independent: each owns its seeds, so the report does not
    depend on ``parallelism``. Results are merged by episode id.

    Args:
        suite_dir (str): directory holding the manifest and the episodes
        config (RunConfig): the run configuration
        parallelism (int): worker processes, ``config.parallelism`` when omitted
        log_dir (str): writes one ``<episode id>.jsonl`` trajectory log per episode when given
        label (str): name stored in the report

    Returns:
        SuiteReport: the per-episode results and aggregates
    """
    episodes = load_suite(suite_dir)
    workers = parallelism or config.parallelism
    scales = suite_action_scales(episodes, config)
    calibration = calibrate_suite(episodes, config, scales)
    jobs = [(episode, seed, config, calibration, log_dir is not None, scales) for episode, seed in episodes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = dict(pool.map(_evaluate_job, jobs))
    else:
        outcomes = dict(map(_evaluate_job, jobs))
    if log_dir is not None:
        os.makedirs(log_dir, exist_ok=True)
        for episode_id, (_, log) in outcomes.items():
            write_log(os.path.join(log_dir, f'{episode_id}.jsonl'), log)
    report = SuiteReport([outcomes[ep.episode_id][0] for ep, _ in episodes], config.digest(), label)
    agg = report.aggregates
    logger.info('Suite %s%s: SR %.3f SPL %.3f NE %.2f TL %.2f over %d episodes (%d invalid).', suite_dir,
                f' [{label}]' if label else '', agg['SR'], agg['SPL'], agg['NE'], agg['TL'], agg['episodes'],
                agg['invalid'])
    return report


def mode_config(config, mode):
    """The configuration of one ablation mode.

    ``base-only`` zeroes both fusion weights and ``+prior`` zeroes lambda1.
    ``+imagination`` zeroes lambda2 and scores each rollout frame by frame
    instead of through a value map.
    """
    if mode == 'base-only':
        return config.replace(fusion={'lambda1': 0.0, 'lambda2': 0.0})
    if mode == '+prior':
        return config.replace(fusion={'lambda1': 0.0})
    if mode == '+imagination':
        return config.replace(fusion={'lambda2': 0.0}, planner={'value_map': False})
    if mode == 'full':
        return config
    raise SuiteError(f'Unknown ablation mode {mode!r}, expected one of {ABLATION_MODES}.')


def write_csv(path, header, rows):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def ablate(suite_dir, config, modes=ABLATION_MODES, out_csv=None, parallelism=None):
    """Runs the suite once per ablation mode.

    Returns:
        dict: mode -> SuiteReport, in the order of ``modes``
    """
    reports = {mode: run_suite(suite_dir, mode_config(config, mode), parallelism, label=mode) for mode in modes}
    if out_csv is not None:
        write_csv(out_csv, ('mode',) + CSV_COLUMNS,
                  [(mode,) + tuple(f'{rep.aggregates[c]:.6f}' for c in CSV_COLUMNS)
                   for mode, rep in reports.items()])
    return reports


def sweep_theta(suite_dir, thetas, config, noise_cfg=None, out_csv=None, parallelism=None):
    """Runs the noisy-model suite once per gate threshold.

    The fallback rate is the fraction of candidate scorings whose imagination
    was gated; the per-step rate counts plan steps with at least one gated
    candidate.

    Returns:
        list of dict: one row per theta with SR, SPL, fallback_rate and fallback_step_rate
    """
    if not thetas:
        raise SuiteError('At least one theta is required.')
    base = config.replace(world_model='noisy', noise=noise_cfg or config.noise)
    rows = []
    for theta in thetas:
        report = run_suite(suite_dir, base.replace(fusion={'theta': float(theta)}), parallelism,
                           label=f'theta={theta:g}')
        agg = report.aggregates
        rows.append({'theta': float(theta), 'SR': agg['SR'], 'SPL': agg['SPL'],
                     'fallback_rate': agg['fallback_rate'], 'fallback_step_rate': agg['fallback_step_rate'],
                     'invalid': agg['invalid']})
    if out_csv is not None:
        keys = ('theta', 'SR', 'SPL', 'fallback_rate', 'fallback_step_rate')
        write_csv(out_csv, keys, [tuple(f'{row[k]:.6f}' for k in keys) for row in rows])
    return rows
