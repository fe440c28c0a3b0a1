"""imaginav module containing score-level fusion, the single-step planner and the episode loop.

Every step the base planner proposes candidates from the occupancy map; each
candidate is imagined by the world model, turned into an egocentric value map
and scored as

    S(A) = S_base(A) + lambda1 * sum_tau gamma^tau V_img(x_tau) + lambda2 * sum_tau gamma^tau V_prior(x_tau)

Only the first action of the best candidate is executed before replanning.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from . import mapping
from . import value
from .geometry import Action, PlatformLimits, action_scales, embed_actions
from .scene import MotionNoise, SensorConfig, sense
from .scene import step as simulate_step
from .world_model import RolloutRequest


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannerConfig:
    """Planner settings.

    ``r_stop`` bounds the distance of the fused-map peak and
    ``stop_goal_range`` the depth of a visible goal ray for STOP to be armed;
    an armed STOP has base score ``stop_bonus``. ``expansion_depth > 1``
    enables the experimental beam lookahead over ``beam_width`` parents.
    ``shared_value_map`` scores every candidate on the maximum of all imagined
    maps instead of its own. Without ``value_map`` the imagined frames are
    scored directly and never projected into a value map.
    """
    k: int = 8
    horizon: int = 4
    context_size: int = 4
    decode_stride: int = 1
    r_stop: float = 1.5
    stop_goal_range: float = 3.0
    stop_bonus: float = 100.0
    expansion_depth: int = 1
    beam_width: int = 3
    shared_value_map: bool = False
    splat_mode: str = 'fan'
    value_enabled: bool = True
    value_map: bool = True
    footprint: float = 0.2
    map_radius: float = 6.0
    record_maps: bool = False

    def __post_init__(self):
        if self.k < 1 or self.horizon < 1 or self.context_size < 1 or self.decode_stride < 1:
            raise ValueError('K, H, the context size and the decode stride must be at least 1.')
        if self.expansion_depth < 1 or self.beam_width < 1:
            raise ValueError('Expansion depth and beam width must be at least 1.')
        if self.splat_mode not in ('fan', 'endpoint'):
            raise ValueError(f'Unknown splat mode {self.splat_mode!r}, expected "fan" or "endpoint".')
        if self.r_stop < 0 or self.stop_goal_range < 0 or self.footprint < 0:
            raise ValueError('Stop radii and the footprint must be non-negative.')


@dataclass(frozen=True)
class FusedScore:
    """Score components of one candidate; ``fused = base + lambda1 * img + lambda2 * prior``."""
    candidate_id: int
    kind: str
    base: float
    img: float
    prior: float
    fused: float
    gated: bool = False
    sigma_a: float = 0.0
    lookahead: float = 0.0

    @property
    def total(self):
        """Ranking score: the fused score plus any beam lookahead."""
        return self.fused + self.lookahead

    def to_record(self):
        return {
            'candidate_id': self.candidate_id,
            'kind': self.kind,
            'base': _finite_or_none(self.base),
            'img': self.img,
            'prior': self.prior,
            'fused': _finite_or_none(self.fused),
            'gated': self.gated,
            'sigma_a': self.sigma_a,
            'lookahead': self.lookahead,
        }


@dataclass(frozen=True, eq=False)
class PlanStep:
    chosen: mapping.CandidateTrajectory
    chosen_id: int
    all_scores: tuple
    executed_action: Action
    stop_issued: bool
    stop_armed: bool = False
    maps: dict = None

    def to_record(self, step, pose, odom, collision=False):
        """The JSON-able trajectory-log record of this step."""
        record = {
            'step': step,
            'pose': pose.to_list(),
            'odom': odom.to_list(),
            'chosen_id': self.chosen_id,
            'executed_action': self.executed_action.to_list(),
            'stop_issued': self.stop_issued,
            'stop_armed': self.stop_armed,
            'collision': bool(collision),
            'scores': [s.to_record() for s in self.all_scores],
        }
        if self.maps is not None:
            record['maps'] = {name: np.round(grid, 6).tolist() for name, grid in self.maps.items()}
        return record


@dataclass(frozen=True, eq=False)
class PlannerState:
    """What the agent knows at a step: map, odometry pose, recent observations and the instruction."""
    grid: mapping.OccupancyGrid
    odom: object
    history: tuple
    instruction: tuple
    step: int = 0


@dataclass(frozen=True)
class EpisodeTrace:
    """Raw outcome of one closed-loop episode, the input of the metrics."""
    final_pose: object
    tl: float
    stop_issued: bool
    steps: int
    collisions: int
    seed: int
    gated_scorings: int = 0
    scorings: int = 0
    gated_steps: int = 0


def _finite_or_none(x):
    return float(x) if math.isfinite(x) else None


class Planner:
    """Bundles the dependencies of the Imagine-Score-Fuse-Act step.

    Args:
        world_model (WorldModel): rollout provider, bound to the episode scene
        sensor (SensorConfig): sensor of the live and imagined frames
        limits (PlatformLimits): feasibility limits of the candidates
        params (FusionParams): discount, LSE temperature, fusion weights and gate
        config (PlannerConfig): K, H, stop rule and expansion settings
        cues (CueWeights): frame-scoring weights
        mapping_config (MappingConfig): base-planner weights
        scales (tuple of floats): action-embedding scales of the suite, estimated per episode when omitted
    """
    def __init__(self, world_model, sensor=None, limits=None, params=None, config=None, cues=None,
                 mapping_config=None, scales=None):
        self._world_model = world_model
        self._sensor = sensor or SensorConfig()
        self._limits = limits or PlatformLimits()
        self._params = params or value.FusionParams()
        self._config = config or PlannerConfig()
        self._cues = cues or value.CueWeights()
        self._mapping_config = mapping_config or mapping.MappingConfig()
        self._suite_scales = None if scales is None else tuple(float(s) for s in scales)
        self._scales = self._suite_scales

    @property
    def world_model(self):
        return self._world_model

    @property
    def sensor(self):
        return self._sensor

    @property
    def limits(self):
        return self._limits

    @property
    def params(self):
        return self._params

    @property
    def config(self):
        return self._config

    @property
    def mapping_config(self):
        return self._mapping_config

    @property
    def scales(self):
        """Action-embedding scales: the suite scales, or estimated on the first planning step of an episode."""
        return self._scales

    def reset(self):
        self._scales = self._suite_scales

    @property
    def imagination_on(self):
        return self._config.value_enabled and self._params.lambda1 > 0

    @property
    def prior_on(self):
        return self._config.value_enabled and self._params.lambda2 > 0

    def plan(self, state):
        """One Imagine-Score-Fuse-Act step.

        Returns:
            PlanStep: the chosen candidate, every candidate's score components and the action to execute
        """
        cfg = self._config
        cands = mapping.candidates(state.grid, state.odom, cfg.k, self._limits, cfg.horizon)
        if not cands:
            logger.warning('No candidates at step %d, stopping.', state.step)
            stop = mapping.stop_candidate(state.odom)
            score = FusedScore(0, mapping.STOP, 0.0, 0.0, 0.0, 0.0)
            return PlanStep(stop, 0, (score,), stop.actions[0], True)
        if self._scales is None:
            self._scales = action_scales([a for c in cands for a in c.actions])

        obs = state.history[-1]
        template = value.EgoGrid.zeros()
        v_prior = None
        if self.prior_on:
            v_prior = value.prior_map(obs, state.instruction, template, self._params.t_prior, self._sensor)

        imagined = {}
        if self.imagination_on:
            for idx, cand in enumerate(cands):
                if not cand.is_stop:
                    imagined[idx] = self._imagine(state, obs, cand, (state.step, idx))
        v_img_max = None
        if imagined and cfg.value_map:
            v_img_max = template.with_values(np.max([iv.grid.values for iv in imagined.values()], axis=0))

        armed = stop_rule(v_img_max, v_prior, obs, state.instruction, self._params, cfg)
        scores = []
        for idx, cand in enumerate(cands):
            scores.append(self._score(idx, cand, state, imagined.get(idx), v_img_max, v_prior, armed))
        if cfg.expansion_depth > 1:
            scores = self._expand(state, obs, cands, scores, v_prior)

        chosen_id = min(range(len(cands)), key=lambda i: (-scores[i].total,) + cands[i].sort_key() + (i,))
        chosen = cands[chosen_id]
        maps = None
        if cfg.record_maps:
            maps = dict(zip(('v_img', 'v_img_ungated'), self._recorded_imagination(imagined, chosen_id, template)))
            maps['v_prior'] = (template if v_prior is None else v_prior).values
            maps['fused'] = fused_map(v_img_max, v_prior, self._params).values
        logger.debug('Step %d: chose candidate %d (%s) with fused score %.4f.', state.step, chosen_id, chosen.kind,
                     scores[chosen_id].fused)
        return PlanStep(chosen, chosen_id, tuple(scores), chosen.actions[0], chosen.is_stop, armed, maps)

    def _recorded_imagination(self, imagined, chosen_id, template):
        """Gated and ungated V_img of the chosen candidate, or their maxima over all candidates for STOP."""
        maps = [iv for iv in imagined.values() if isinstance(iv, value.ImaginedValue)]
        if not maps:
            return template.values, template.values
        chosen = imagined.get(chosen_id)
        if chosen is not None:
            return chosen.grid.values, chosen.ungated.values
        return (np.max([iv.grid.values for iv in maps], axis=0),
                np.max([iv.ungated.values for iv in maps], axis=0))

    def _imagine(self, state, obs, cand, key):
        # the oracle renders in the true frame: re-anchor the chain at the live true pose
        world_poses = [obs.pose_gt.to_world(p.relative_to(state.odom)) for p in cand.poses]
        req = RolloutRequest(state.history[-self._config.context_size:], state.instruction, world_poses,
                             self._config.decode_stride, embed_actions(cand.actions, self._scales), key)
        rollout = self._world_model.rollout(req)
        if not self._config.value_map:
            return value.frame_score(rollout, state.instruction, self._cues, self._params, self._sensor.d_max)
        return value.imagination_to_value(rollout, state.instruction, obs.pose_gt, self._sensor, self._cues,
                                          self._params, fan=self._config.splat_mode == 'fan')

    def _score(self, idx, cand, state, imagined, v_img_max, v_prior, armed):
        p = self._params
        if cand.is_stop:
            base = mapping.base_score(cand, self._mapping_config, self._config.stop_bonus if armed else None)
            return FusedScore(idx, cand.kind, base, 0.0, 0.0, fuse(base, 0.0, 0.0, p))
        base = mapping.base_score(cand, self._mapping_config)
        img = 0.0
        gated = False
        sigma_a = 0.0
        if imagined is not None:
            if self._config.shared_value_map and v_img_max is not None:
                img = value.sample_path(v_img_max, cand.poses, p.gamma, state.odom)
            else:
                img = imagined.path_value(cand.poses, p.gamma, state.odom)
            gated = imagined.gated
            sigma_a = imagined.sigma_a
            if gated:
                img = 0.0
        prior = 0.0 if v_prior is None else value.sample_path(v_prior, cand.poses, p.gamma, state.odom)
        return FusedScore(idx, cand.kind, base, img, prior, fuse(base, img, prior, p), gated, sigma_a)

    def _expand(self, state, obs, cands, scores, v_prior):
        """Beam lookahead: adds the discounted best continuation score to the top parents."""
        cfg = self._config
        movable = [i for i, c in enumerate(cands) if not c.is_stop]
        movable.sort(key=lambda i: (-scores[i].fused,) + cands[i].sort_key() + (i,))
        out = list(scores)
        discount = self._params.gamma ** cfg.horizon
        for i in movable[:cfg.beam_width]:
            best = self._best_continuation(state, obs, cands[i].poses[-1], v_prior, 2, (i,))
            out[i] = replace(scores[i], lookahead=discount * best)
        return out

    def _best_continuation(self, state, obs, pose, v_prior, level, path):
        cfg = self._config
        children = [c for c in mapping.candidates(state.grid, pose, cfg.k, self._limits, cfg.horizon)
                    if not c.is_stop]
        if not children:
            return 0.0
        best = -math.inf
        for j, child in enumerate(children[:cfg.beam_width]):
            imagined = None
            if self.imagination_on:
                imagined = self._imagine(state, obs, child, (state.step,) + path + (level, j))
            score = self._score(j, child, state, imagined, None, v_prior, False)
            total = score.fused
            if level < cfg.expansion_depth:
                total += self._params.gamma ** cfg.horizon * self._best_continuation(
                    state, obs, child.poses[-1], v_prior, level + 1, path + (j,))
            best = max(best, total)
        return best


def fuse(base, img, prior, params):
    """Score-level fusion of one candidate."""
    return base + params.lambda1 * img + params.lambda2 * prior


def fused_map(v_img, v_prior, params):
    """Pointwise ``lambda1 * V_img + lambda2 * V_prior``; missing maps count as zero."""
    total = value.EgoGrid.zeros()
    values = total.values
    if v_img is not None:
        values = values + params.lambda1 * v_img.values
    if v_prior is not None:
        values = values + params.lambda2 * v_prior.values
    return total.with_values(values)


def stop_rule(v_img, v_prior, obs, instruction, params, config):
    """Arms STOP when the goal is both imagined near and seen near.

    Condition (a): the peak of the fused map lies within ``r_stop`` of the
    agent. When the fused map holds no value at all, the nearest visible goal
    ray end point takes the place of the peak. Condition (b): a goal-token
    ray is visible at a depth below ``stop_goal_range``.

    Returns:
        bool: True if STOP is armed
    """
    if not instruction:
        return False
    goal_rays = np.asarray(obs.semantic) == instruction[-1]
    if not goal_rays.any():
        return False
    nearest = float(np.min(obs.depth[goal_rays]))
    if not nearest < config.stop_goal_range:
        return False
    peak = value.peak_distance(fused_map(v_img, v_prior, params))
    if math.isinf(peak):
        peak = nearest
    return peak <= config.r_stop


def one_step_plan(state, planner):
    return planner.plan(state)


def run_episode(episode, planner, seed=0, motion_noise=None, log=None):
    """Runs the closed loop sense, map, plan and act until STOP or the step budget.

    The true pose evolves through the simulator with actuation noise; the
    odometry pose integrates the true relative motion plus independent drift.
    Collisions are counted and do not end the episode.

    Args:
        episode (Episode): the episode to run
        planner (Planner): planner bound to the episode scene, reset before the run
        seed (int): seed of the actuation and odometry noise
        motion_noise (MotionNoise): noise model, ``MotionNoise()`` by default
        log (list): receives one trajectory-log record per step when given

    Returns:
        EpisodeTrace: final pose, trajectory length, STOP flag and counters
    """
    planner.reset()
    noise = motion_noise if motion_noise is not None else MotionNoise()
    rng = np.random.default_rng([int(seed), 1])
    scene = episode.scene
    sensor = planner.sensor
    cfg = planner.config
    pose = episode.start
    odom = episode.start
    grid = mapping.OccupancyGrid.around(odom, cfg.map_radius, planner.mapping_config)
    history = deque(maxlen=cfg.context_size)
    tl = 0.0
    collisions = 0
    stopped = False
    gated_scorings = scorings = gated_steps = 0
    steps = 0
    for t in range(episode.max_steps):
        obs = sense(scene, pose, sensor, odom)
        history.append(obs)
        grid = mapping.update_map(grid, obs, sensor)
        plan = planner.plan(PlannerState(grid, odom, tuple(history), episode.instruction, t))
        steps = t + 1
        moving = [s for s in plan.all_scores if s.kind != mapping.STOP]
        if planner.imagination_on:
            scorings += len(moving)
            gated = sum(s.gated for s in moving)
            gated_scorings += gated
            gated_steps += int(gated > 0)
        if plan.stop_issued:
            stopped = True
            if log is not None:
                log.append(plan.to_record(t, pose, odom))
            break
        new_pose, collided = simulate_step(scene, pose, plan.executed_action, noise, rng, planner.limits,
                                           cfg.footprint)
        rel = new_pose.relative_to(pose)
        nx = ny = nth = 0.0
        if noise.odom_trans > 0 or noise.odom_rot > 0:
            nx, ny = rng.normal(0.0, noise.odom_trans, size=2)
            nth = rng.normal(0.0, noise.odom_rot)
        if log is not None:
            log.append(plan.to_record(t, pose, odom, collided))
        odom = odom.compose(rel.x + nx, rel.y + ny, rel.theta + nth)
        tl += pose.distance_to(new_pose)
        collisions += int(collided)
        pose = new_pose
    if log and cfg.record_maps:
        log[-1].setdefault('maps', {})['occupancy'] = grid.to_pgm_array().tolist()
    logger.info('Episode %s: %s after %d steps, TL %.2f m, %d collisions.', episode.episode_id or '?',
                'STOP' if stopped else 'timeout', steps, tl, collisions)
    return EpisodeTrace(pose, tl, stopped, steps, collisions, int(seed), gated_scorings, scorings, gated_steps)
