"""imaginav module containing the world-model contract and its oracle implementations.

A world model maps the triplet (observation context, instruction, pose chain)
to a sequence of imagined egocentric frames. Two stand-ins are provided: the
ground-truth oracle, which renders the true scene at every imagined pose, and a
noise-corrupted ensemble of oracles whose spread provides the rollout
uncertainty used by the gate.
"""

import abc
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .scene import NONE, SensingError, SensorConfig, sense


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseConfig:
    """Corruption applied by the noisy oracle.

    ``sigma_d`` is the depth jitter in meters (grown linearly with the step
    index when ``drift`` is set), ``p_drop`` the per-ray probability of losing
    the semantic label and ``p_hall`` the per-ray probability of hallucinating
    an opening (max-range depth, no label).
    """
    sigma_d: float = 0.0
    p_drop: float = 0.0
    p_hall: float = 0.0
    ensemble_size: int = 8
    drift: bool = True

    def __post_init__(self):
        if self.sigma_d < 0:
            raise ValueError('The depth jitter sigma_d must be non-negative.')
        if not (0 <= self.p_drop <= 1 and 0 <= self.p_hall <= 1):
            raise ValueError('Dropout and hallucination probabilities must lie in [0, 1].')
        if self.ensemble_size < 1:
            raise ValueError('The ensemble needs at least one member.')

    @property
    def is_noiseless(self):
        return self.sigma_d == 0 and self.p_drop == 0 and self.p_hall == 0

    def depth_sigma(self, tau, horizon):
        """Depth jitter at step ``tau`` of an ``horizon``-step rollout."""
        if self.drift:
            return self.sigma_d * (1.0 + tau / horizon)
        return self.sigma_d


@dataclass(frozen=True, eq=False)
class RolloutRequest:
    """Inputs of one rollout.

    Args:
        context (sequence of Observation): the last m observations, most recent last
        instruction (sequence of str): the instruction tokens
        poses (sequence of Pose): the pose chain C(A), one pose per action
        decode_stride (int): only every ``decode_stride``-th step is decoded
        embedding (np.ndarray): H x D action conditioning tokens, carried through
        rng_key (tuple of int): non-negative integers that select the noise stream
    """
    context: tuple
    instruction: tuple
    poses: tuple
    decode_stride: int = 1
    embedding: np.ndarray = None
    rng_key: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'context', tuple(self.context))
        object.__setattr__(self, 'instruction', tuple(self.instruction))
        object.__setattr__(self, 'poses', tuple(self.poses))
        object.__setattr__(self, 'rng_key', tuple(int(k) for k in self.rng_key))
        if not self.context:
            raise ValueError('A rollout needs at least one context observation.')
        if not self.poses:
            raise ValueError('A rollout needs at least one pose.')
        if self.decode_stride < 1:
            raise ValueError('The decode stride must be at least 1.')
        if any(k < 0 for k in self.rng_key):
            raise ValueError('RNG keys must be non-negative integers.')

    @property
    def horizon(self):
        return len(self.poses)

    def decode_steps(self):
        """The decoded step indices S = {1, 1 + stride, ...} up to H."""
        return list(range(1, self.horizon + 1, self.decode_stride))


@dataclass(frozen=True, eq=False)
class ImaginedFrame:
    depth: np.ndarray
    semantic: np.ndarray
    pose: object
    per_ray_sigma: np.ndarray
    tau: int

    def __post_init__(self):
        if not (self.depth.shape == self.semantic.shape == self.per_ray_sigma.shape):
            raise ValueError('Frame arrays must have equal length.')


@dataclass(frozen=True, eq=False)
class Rollout:
    """Decoded frames sorted by step index, with the rollout uncertainty.

    ``raw_sigma`` is the uncalibrated mean per-ray depth spread (meters) and
    ``sigma_a`` its mapping to [0, 1].
    """
    frames: tuple
    sigma_a: float
    raw_sigma: float = 0.0
    embedding: np.ndarray = None


class CalibrationTable:
    """Empirical CDF of raw rollout uncertainties.

    Queries are answered with the mid-rank percentile
    ``(#{v < x} + 0.5 #{v == x}) / n``; queries below the minimum map to 0,
    above the maximum to 1. A table whose values are all equal is flagged
    degenerate and answers 0.5 to every query.

    Args:
        values (array of floats): raw uncertainties, at least one
    """
    def __init__(self, values):
        values = np.sort(np.asarray(values, dtype=np.float64).ravel())
        if values.size == 0:
            raise ValueError('A calibration table needs at least one value.')
        if not np.all(np.isfinite(values)):
            raise ValueError('Calibration values must be finite.')
        self._values = values
        self._degenerate = bool(values[0] == values[-1])
        if self._degenerate:
            warnings.warn('All calibration values are equal, the uncertainty percentile is degenerate.')

    @property
    def values(self):
        return self._values

    @property
    def degenerate(self):
        return self._degenerate

    def percentile(self, raw):
        """Maps a raw uncertainty to its percentile in [0, 1]."""
        if self._degenerate:
            return 0.5
        v = self._values
        if raw < v[0]:
            return 0.0
        if raw > v[-1]:
            return 1.0
        less = np.searchsorted(v, raw, side='left')
        equal = np.searchsorted(v, raw, side='right') - less
        return float((less + 0.5 * equal) / v.size)

    def to_dict(self):
        return {'values': self._values.tolist(), 'degenerate': self._degenerate}

    @classmethod
    def from_dict(cls, data):
        with warnings.catch_warnings():
            warnings.simplefilter('ignore')
            return cls(data['values'])


class WorldModel(abc.ABC):
    """Base class of the imagined-rollout providers.

    Args:
        scene (Scene): the ground-truth scene the oracles render
        sensor (SensorConfig): ray fan of the imagined frames
        sigma_ceiling (float): per-ray uncertainty reported for frames that cannot be rendered
    """
    def __init__(self, scene, sensor=None, sigma_ceiling=1.0):
        self._scene = scene
        self._sensor = sensor or SensorConfig()
        if not sigma_ceiling > 0:
            raise ValueError('The uncertainty ceiling must be positive.')
        self._sigma_ceiling = float(sigma_ceiling)
        self._calibration = None

    @property
    def scene(self):
        return self._scene

    @property
    def sensor(self):
        return self._sensor

    @property
    def sigma_ceiling(self):
        return self._sigma_ceiling

    @property
    def calibration(self):
        """CalibrationTable: maps raw uncertainties to percentiles, None reports ``raw / ceiling``."""
        return self._calibration

    @calibration.setter
    def calibration(self, table):
        if table is not None and not isinstance(table, CalibrationTable):
            raise ValueError('Expected a CalibrationTable or None.')
        self._calibration = table

    @abc.abstractmethod
    def imagine(self, req):
        """Returns the decoded ImaginedFrames of a request, sorted by step index."""

    def rollout(self, req):
        frames = tuple(self.imagine(req))
        raw = self._raw(frames)
        return Rollout(frames, self.sigma_a(raw), raw, req.embedding)

    def raw_uncertainty(self, req):
        return self._raw(tuple(self.imagine(req)))

    def sigma_a(self, raw):
        if self._calibration is not None:
            return self._calibration.percentile(raw)
        return float(min(max(raw / self._sigma_ceiling, 0.0), 1.0))

    @staticmethod
    def _raw(frames):
        return float(np.mean([f.per_ray_sigma.mean() for f in frames]))

    def _render(self, pose):
        """Ground-truth depth and labels at a pose, or None when the pose is outside the scene."""
        try:
            obs = sense(self._scene, pose, self._sensor)
        except SensingError:
            return None
        return obs.depth, obs.semantic

    def _blank(self, pose, tau):
        n = self._sensor.n_rays
        return ImaginedFrame(np.full(n, float(self._sensor.d_max)), np.full(n, NONE),
                             pose, np.full(n, self._sigma_ceiling), tau)


class OracleWorldModel(WorldModel):
    """Renders the true scene at every imagined pose; instruction-agnostic and certain."""

    def imagine(self, req):
        frames = []
        for tau in req.decode_steps():
            pose = req.poses[tau - 1]
            rendered = self._render(pose)
            if rendered is None:
                frames.append(self._blank(pose, tau))
                continue
            depth, semantic = rendered
            frames.append(ImaginedFrame(depth, semantic, pose, np.zeros(depth.shape), tau))
        return frames


class NoisyOracleWorldModel(WorldModel):
    """Ensemble of corrupted oracles.

    Every member renders the true frame and corrupts it independently. The
    returned frame holds the ensemble mean depth, the majority label (ties go
    to the lexicographically smallest label) and the ensemble depth standard
    deviation per ray. Each request draws from its own stream seeded by
    ``(seed, *req.rng_key)``.

    Args:
        scene (Scene): the ground-truth scene
        noise (NoiseConfig): corruption parameters
        seed (int): base seed of the noise streams
        sensor (SensorConfig): ray fan of the frames
        sigma_ceiling (float): uncertainty of unrenderable frames
    """
    def __init__(self, scene, noise=None, seed=0, sensor=None, sigma_ceiling=1.0):
        super().__init__(scene, sensor, sigma_ceiling)
        self._noise = noise or NoiseConfig()
        self._seed = int(seed)

    @property
    def noise(self):
        return self._noise

    @property
    def seed(self):
        return self._seed

    def imagine(self, req):
        rng = np.random.default_rng([self._seed, *req.rng_key])
        d_max = float(self._sensor.d_max)
        frames = []
        for tau in req.decode_steps():
            pose = req.poses[tau - 1]
            rendered = self._render(pose)
            if rendered is None:
                frames.append(self._blank(pose, tau))
                continue
            depth, semantic = rendered
            members_d = []
            members_s = []
            for _ in range(self._noise.ensemble_size):
                d, s = self._corrupt(depth, semantic, self._noise.depth_sigma(tau, req.horizon), d_max, rng)
                members_d.append(d)
                members_s.append(s)
            frames.append(self._reduce(np.stack(members_d), np.stack(members_s), pose, tau, d_max))
        return frames

    def _corrupt(self, depth, semantic, sigma, d_max, rng):
        n = depth.shape[0]
        depth = depth.copy()
        semantic = semantic.copy()
        if sigma > 0:
            depth = np.clip(depth + rng.normal(0.0, sigma, n), 1e-3, d_max)
        if self._noise.p_drop > 0:
            semantic[rng.random(n) < self._noise.p_drop] = NONE
        if self._noise.p_hall > 0:
            hall = rng.random(n) < self._noise.p_hall
            depth[hall] = d_max
            semantic[hall] = NONE
        return depth, semantic

    @staticmethod
    def _reduce(depths, semantics, pose, tau, d_max):
        first = depths[0]
        same = np.all(depths == first, axis=0)
        depth = np.where(same, first, np.clip(depths.mean(axis=0), 1e-3, d_max))
        sigma = np.where(same, 0.0, depths.std(axis=0))
        labels, codes = np.unique(semantics, return_inverse=True)
        codes = codes.reshape(semantics.shape)
        counts = np.zeros((semantics.shape[1], labels.size), dtype=np.int64)
        np.add.at(counts, (np.broadcast_to(np.arange(semantics.shape[1]), codes.shape), codes), 1)
        return ImaginedFrame(depth, labels[np.argmax(counts, axis=1)], pose, sigma, tau)


def rollout(model, req):
    """Runs one rollout of any WorldModel."""
    return model.rollout(req)


def oracle_rollout(scene, req, sensor=None):
    return OracleWorldModel(scene, sensor).rollout(req)


def noisy_oracle_rollout(scene, req, cfg, seed, sensor=None, calibration=None):
    model = NoisyOracleWorldModel(scene, cfg, seed, sensor)
    model.calibration = calibration
    return model.rollout(req)


def calibrate_sigma(model, requests):
    """Builds the CalibrationTable of a model from a suite of requests.

    Args:
        model (WorldModel): the model to calibrate, left unchanged
        requests (sequence of RolloutRequest): at least one request

    Returns:
        CalibrationTable: the empirical CDF of the raw uncertainties
    """
    requests = list(requests)
    if not requests:
        raise ValueError('Cannot calibrate on an empty request suite.')
    raw = [model.raw_uncertainty(req) for req in requests]
    logger.info('Calibrated sigma on %d rollouts: raw range [%.4f, %.4f].', len(raw), min(raw), max(raw))
    return CalibrationTable(raw)
