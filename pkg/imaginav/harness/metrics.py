"""imaginav module containing the navigation metrics, the geodesic oracle and suite reports.

Metrics follow the usual embodied-navigation conventions: an episode succeeds
when the agent issues STOP within the success radius (geodesic distance) of
the goal, SPL weights success by ``geodesic / max(geodesic, TL)``, NE is the
final geodesic distance to the goal and TL the summed executed displacement.
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.sparse import csgraph

from .._version import __version__
from ..core import _numba_funcs
from ..core.mapping import grid_graph


logger = logging.getLogger(__name__)

REPORT_FORMAT = 'imaginav.report'
REPORT_VERSION = 1
AGGREGATE_TOL = 1e-9


class ReportError(ValueError):
    """Raised for empty reports and reports whose aggregates do not match their rows."""


class GeodesicOracle:
    """Shortest-path distances on the ground-truth scene.

    Points in mutual line of sight (no wall, deceptive ones included, crosses
    the straight segment) are at their Euclidean distance. Otherwise the
    distance comes from an 8-connected Dijkstra field over the free raster of
    the scene, plus the offsets of both points to their cell centres.

    Args:
        scene (Scene): the ground-truth scene
        resolution (float): raster cell size in meters
    """
    def __init__(self, scene, resolution=0.1):
        self._scene = scene
        self._resolution = float(resolution)
        self._free = scene.free_raster(self._resolution)
        self._graph = grid_graph(np.ones(self._free.shape), ~self._free, self._resolution)
        self._fields = {}

    @property
    def scene(self):
        return self._scene

    @property
    def resolution(self):
        return self._resolution

    def line_of_sight(self, a, b):
        if a[0] == b[0] and a[1] == b[1]:
            return True
        return not np.isfinite(_numba_funcs.first_contact(float(a[0]), float(a[1]), float(b[0]), float(b[1]),
                                                          self._scene.segments))

    def _anchor(self, point):
        """Nearest free cell to a point within one ring, with the point-to-centre offset."""
        res = self._resolution
        i0 = int(math.floor(point[0] / res))
        j0 = int(math.floor(point[1] / res))
        best = None
        for di in (0, -1, 1):
            for dj in (0, -1, 1):
                i, j = i0 + di, j0 + dj
                if not (0 <= i < self._free.shape[0] and 0 <= j < self._free.shape[1]) or not self._free[i, j]:
                    continue
                offset = math.hypot(point[0] - (i + 0.5) * res, point[1] - (j + 0.5) * res)
                if best is None or offset < best[1]:
                    best = (i * self._free.shape[1] + j, offset)
        return best

    def _field(self, goal):
        key = (float(goal[0]), float(goal[1]))
        if key not in self._fields:
            anchor = self._anchor(key)
            if anchor is None:
                self._fields[key] = None
            else:
                dist = csgraph.dijkstra(self._graph, directed=False, indices=anchor[0])
                self._fields[key] = (dist, anchor[1])
        return self._fields[key]

    def distance(self, point, goal):
        """Geodesic distance between two points, inf when they are disconnected."""
        point = (float(point[0]), float(point[1]))
        goal = (float(goal[0]), float(goal[1]))
        if self.line_of_sight(point, goal):
            return math.hypot(goal[0] - point[0], goal[1] - point[1])
        field = self._field(goal)
        anchor = self._anchor(point)
        if field is None or anchor is None:
            return math.inf
        dist, goal_offset = field
        return float(dist[anchor[0]] + anchor[1] + goal_offset)


@dataclass(frozen=True)
class EpisodeResult:
    """Per-episode metrics.

    ``valid`` is False for episodes excluded from the aggregates, with
    ``reason`` saying why. The fallback counters record how many candidate
    scorings (and plan steps) had their imagination gated.
    """
    episode_id: str
    success: bool
    ne: float
    tl: float
    spl: float
    steps: int
    collisions: int
    seed: int
    geodesic: float
    stop_issued: bool = False
    valid: bool = True
    reason: str = ''
    gated_scorings: int = 0
    scorings: int = 0
    gated_steps: int = 0

    def to_dict(self):
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ('ne', 'geodesic'):
            if data.get(key) is None:
                data[key] = math.inf
        return cls(**data)


def spl(success, geodesic, tl):
    """Success weighted by path length; 1 for a success with zero geodesic and zero TL."""
    if not success:
        return 0.0
    longest = max(geodesic, tl)
    if longest <= 0:
        return 1.0
    return geodesic / longest


def compute_metrics(episode, final_pose, tl, stop_issued=True, oracle=None, success_radius=None, steps=0,
                    collisions=0, seed=0, counters=(0, 0, 0)):
    """Turns the outcome of an episode into an EpisodeResult.

    Args:
        episode (Episode): the episode, its ``geodesic_distance`` is used when set
        final_pose (Pose): the true pose at the end of the episode
        tl (float): trajectory length in meters
        stop_issued (bool): whether the agent ended the episode with STOP
        oracle (GeodesicOracle): distance oracle of the episode scene, built when omitted
        success_radius (float): overrides the episode success radius
        steps, collisions, seed: copied into the result
        counters (tuple of ints): gated scorings, scorings and gated steps

    Returns:
        EpisodeResult: invalid when the goal is unreachable from the start
    """
    oracle = oracle or GeodesicOracle(episode.scene)
    radius = episode.success_radius if success_radius is None else success_radius
    geodesic = episode.geodesic_distance
    if geodesic is None:
        geodesic = oracle.distance((episode.start.x, episode.start.y), episode.goal_position)
    gated_scorings, scorings, gated_steps = counters
    if not math.isfinite(geodesic):
        logger.warning('Episode %s excluded: goal unreachable from the start.', episode.episode_id)
        return EpisodeResult(episode.episode_id, False, math.inf, float(tl), 0.0, steps, collisions, seed,
                             math.inf, stop_issued, False, 'goal unreachable from start', gated_scorings,
                             scorings, gated_steps)
    ne = oracle.distance((final_pose.x, final_pose.y), episode.goal_position)
    success = bool(stop_issued and ne <= radius)
    return EpisodeResult(episode.episode_id, success, float(ne), float(tl), spl(success, geodesic, tl), steps,
                         collisions, seed, float(geodesic), bool(stop_issued), True, '', gated_scorings,
                         scorings, gated_steps)


def aggregate_results(rows):
    """Means of TL, NE, SR and SPL over the valid rows, plus the gating fallback rates."""
    valid = [r for r in rows if r.valid]
    if not valid:
        raise ReportError('No valid episodes to aggregate.')
    scorings = sum(r.scorings for r in valid)
    steps = sum(r.steps for r in valid)
    return {
        'TL': float(np.mean([r.tl for r in valid])),
        'NE': float(np.mean([r.ne for r in valid])),
        'SR': float(np.mean([float(r.success) for r in valid])),
        'SPL': float(np.mean([r.spl for r in valid])),
        'episodes': len(valid),
        'invalid': len(rows) - len(valid),
        'fallback_rate': float(sum(r.gated_scorings for r in valid) / scorings) if scorings else 0.0,
        'fallback_step_rate': float(sum(r.gated_steps for r in valid) / steps) if steps else 0.0,
    }


class SuiteReport:
    """Per-episode results of one suite run with their aggregates.

    Args:
        rows (sequence of EpisodeResult): results ordered by episode id
        config_hash (str): digest of the run configuration
        label (str): free-form name of the run, e.g. the ablation mode
    """
    def __init__(self, rows, config_hash, label=''):
        self._rows = tuple(sorted(rows, key=lambda r: r.episode_id))
        if not self._rows:
            raise ReportError('A suite report needs at least one episode.')
        self._config_hash = config_hash
        self._label = label
        self._aggregates = aggregate_results(self._rows)

    @property
    def rows(self):
        return self._rows

    @property
    def config_hash(self):
        return self._config_hash

    @property
    def label(self):
        return self._label

    @property
    def aggregates(self):
        return dict(self._aggregates)

    @property
    def provenance(self):
        return f'imaginav {__version__} config {self._config_hash[:12]}'

    @property
    def invalid(self):
        return [r for r in self._rows if not r.valid]

    def to_dict(self):
        return {
            'format': REPORT_FORMAT,
            'version': REPORT_VERSION,
            'label': self._label,
            'config_hash': self._config_hash,
            'provenance': self.provenance,
            'aggregates': self._aggregates,
            'rows': [r.to_dict() for r in self._rows],
        }

    def content_hash(self):
        """SHA-256 of the canonical JSON form of the report."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        if data.get('format') != REPORT_FORMAT or data.get('version') != REPORT_VERSION:
            raise ReportError('Not an imaginav suite report of a supported version.')
        rows = [EpisodeResult.from_dict(r) for r in data['rows']]
        report = cls(rows, data['config_hash'], data.get('label', ''))
        stored = data['aggregates']
        for key, val in report._aggregates.items():
            if key not in stored or abs(stored[key] - val) > AGGREGATE_TOL:
                raise ReportError(f'Stored aggregate {key!r} does not match the per-episode rows.')
        return report

    @classmethod
    def load(cls, path):
        with open(path, encoding='utf-8') as f:
            return cls.from_dict(json.load(f))
