"""imaginav module containing the deterministic 2D indoor simulator: scenes, sensing and motion.

Scenes are axis-aligned room layouts bounded by thin wall segments, connected
by doorways and populated with labeled landmark discs. Landmarks are visible to
the sensor but do not block motion. Walls flagged as *deceptive* behave like
mirrors: rays pass through them while the body still collides.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _numba_funcs
from .geometry import Pose, PlatformLimits, integrate_poses


logger = logging.getLogger(__name__)

SCENE_FORMAT = 'imaginav.scene'
EPISODE_FORMAT = 'imaginav.episode'
FORMAT_VERSION = 1
WALL = 'wall'
NONE = 'none'
DEFAULT_VOCABULARY = ('tv', 'sofa', 'bed', 'sink', 'plant', 'fridge', 'table', 'lamp', 'piano', 'bathtub')


class GenerationError(ValueError):
    """Raised when a scene specification cannot be realized."""


class SensingError(ValueError):
    """Raised when the sensor is queried from outside the scene bounds."""


@dataclass(frozen=True)
class SensorConfig:
    """Raycast depth fan: ``n_rays`` rays spread over ``fov`` radians, clipped at ``d_max`` meters."""
    n_rays: int = 128
    fov: float = math.pi / 2.0
    d_max: float = 12.0

    def __post_init__(self):
        if self.n_rays < 1 or not (0 < self.fov <= 2 * math.pi) or not self.d_max > 0:
            raise ValueError('Sensor needs at least one ray, a field of view in (0, 2pi] and a positive range.')

    def ray_angles(self):
        """Ray headings relative to the agent heading (radians)."""
        if self.n_rays == 1:
            return np.zeros(1)
        return self.fov * (np.arange(self.n_rays) / (self.n_rays - 1) - 0.5)


@dataclass(frozen=True)
class MotionNoise:
    """Zero-mean Gaussian actuation noise and the independent odometry drift (meters, radians)."""
    sigma_trans: float = 0.01
    sigma_rot: float = math.radians(0.2)
    odom_trans: float = 0.01
    odom_rot: float = math.radians(0.2)

    def __post_init__(self):
        if min(self.sigma_trans, self.sigma_rot, self.odom_trans, self.odom_rot) < 0:
            raise ValueError('Noise standard deviations must be non-negative.')

    @classmethod
    def noiseless(cls):
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class GeneratorConfig:
    """Procedural layout parameters (meters)."""
    width: float = 16.0
    height: float = 12.0
    rooms: int = 4
    landmarks: int = 4
    landmark_radius: float = 0.3
    door_width: float = 1.0
    extra_door_prob: float = 0.3
    jitter: float = 0.2
    min_room_size: float = 2.5
    deceptive_walls: int = 0
    vocabulary: tuple = DEFAULT_VOCABULARY

    def __post_init__(self):
        if self.rooms < 1:
            raise ValueError('A scene needs at least one room.')
        if self.landmarks < 0 or self.deceptive_walls < 0:
            raise ValueError('Landmark and deceptive wall counts must be non-negative.')
        object.__setattr__(self, 'vocabulary', tuple(self.vocabulary))


@dataclass(frozen=True)
class Landmark:
    label: str
    x: float
    y: float
    radius: float


class Scene:
    """Immutable 2D indoor scene.

    Args:
        bounds (tuple of floats): width and height in meters, the scene spans [0, w] x [0, h]
        segments (array of floats): N x 4 wall endpoints
        landmarks (sequence of Landmark): labeled discs
        deceptive (array of bools): mirror-like walls (transparent to rays, solid to the body)
        rooms (sequence of tuples): axis-aligned room rectangles (x0, y0, x1, y1)
        doorways (sequence of tuples): (room_a, room_b, x, y) door centers
        seed (int): generator seed, zero for hand-built scenes
    """
    def __init__(self, bounds, segments, landmarks=(), deceptive=None, rooms=(), doorways=(), seed=0):
        self._bounds = (float(bounds[0]), float(bounds[1]))
        self._segments = np.array(segments, dtype=np.float64).reshape(-1, 4)
        seg = self._segments
        lengths = np.hypot(seg[:, 2] - seg[:, 0], seg[:, 3] - seg[:, 1])
        if np.any(lengths <= 1e-6):
            raise ValueError('Wall segments must have a length above 1e-6 m.')
        if deceptive is None:
            deceptive = np.zeros(len(self._segments), dtype=bool)
        self._deceptive = np.array(deceptive, dtype=bool)
        if self._deceptive.shape != (len(self._segments),):
            raise ValueError('One deceptive flag per wall segment is required.')
        self._landmarks = tuple(landmarks)
        for lm in self._landmarks:
            if not self.contains(lm.x, lm.y):
                raise ValueError(f'Landmark {lm.label!r} lies outside the scene bounds.')
        self._discs = np.array([[lm.x, lm.y, lm.radius] for lm in self._landmarks],
                               dtype=np.float64).reshape(-1, 3)
        self._rooms = tuple(tuple(float(v) for v in r) for r in rooms)
        self._doorways = tuple((int(a), int(b), float(x), float(y)) for a, b, x, y in doorways)
        self._seed = int(seed)

    @property
    def bounds(self):
        """Width and height of the scene (meters)."""
        return self._bounds

    @property
    def segments(self):
        """N x 4 array of wall endpoints, not to be modified."""
        return self._segments

    @property
    def deceptive(self):
        return self._deceptive

    @property
    def landmarks(self):
        return self._landmarks

    @property
    def discs(self):
        """M x 3 array of landmark discs (x, y, radius), same order as ``landmarks``."""
        return self._discs

    @property
    def rooms(self):
        return self._rooms

    @property
    def doorways(self):
        return self._doorways

    @property
    def seed(self):
        return self._seed

    def contains(self, x, y):
        return 0.0 <= x <= self._bounds[0] and 0.0 <= y <= self._bounds[1]

    def landmark(self, label):
        for lm in self._landmarks:
            if lm.label == label:
                return lm
        raise ValueError(f'No landmark labeled {label!r} in the scene.')

    def room_of(self, x, y):
        """Index of the room containing the point, -1 if none."""
        for idx, (x0, y0, x1, y1) in enumerate(self._rooms):
            if x0 <= x <= x1 and y0 <= y <= y1:
                return idx
        return -1

    def room_graph(self):
        """Adjacency sets of the doorway graph."""
        graph = {idx: set() for idx in range(len(self._rooms))}
        for a, b, _, _ in self._doorways:
            graph[a].add(b)
            graph[b].add(a)
        return graph

    def free_raster(self, resolution):
        """Boolean raster of the scene, False on cells touched by any wall.

        Returns:
            np.ndarray: array of shape (ceil(w / res), ceil(h / res)), cell (i, j)
            covers [i * res, (i + 1) * res) x [j * res, (j + 1) * res)
        """
        nx = int(math.ceil(self._bounds[0] / resolution))
        ny = int(math.ceil(self._bounds[1] / resolution))
        free = np.ones((nx, ny), dtype=bool)
        for x1, y1, x2, y2 in self._segments:
            n = int(math.ceil(math.hypot(x2 - x1, y2 - y1) / (resolution / 4.0))) + 1
            xs = np.linspace(x1, x2, n)
            ys = np.linspace(y1, y2, n)
            ii = np.clip((xs / resolution).astype(int), 0, nx - 1)
            jj = np.clip((ys / resolution).astype(int), 0, ny - 1)
            free[ii, jj] = False
        return free

    def clearance(self, x, y):
        """Distance from a point to the nearest wall (meters)."""
        if len(self._segments) == 0:
            return np.inf
        p = np.array([x, y])
        a = self._segments[:, :2]
        b = self._segments[:, 2:]
        ab = b - a
        t = np.clip(np.einsum('ij,ij->i', p - a, ab) / np.einsum('ij,ij->i', ab, ab), 0.0, 1.0)
        closest = a + t[:, None] * ab
        return float(np.min(np.hypot(*(closest - p).T)))

    def to_dict(self):
        return {
            'format': SCENE_FORMAT,
            'version': FORMAT_VERSION,
            'bounds': list(self._bounds),
            'segments': self._segments.tolist(),
            'deceptive': self._deceptive.tolist(),
            'landmarks': [[lm.label, lm.x, lm.y, lm.radius] for lm in self._landmarks],
            'rooms': [list(r) for r in self._rooms],
            'doorways': [list(d) for d in self._doorways],
            'seed': self._seed,
        }

    @classmethod
    def from_dict(cls, data):
        _check_format(data, SCENE_FORMAT)
        return cls(data['bounds'], data['segments'],
                   [Landmark(str(lab), float(x), float(y), float(r)) for lab, x, y, r in data['landmarks']],
                   data['deceptive'], data['rooms'], data['doorways'], data['seed'])


@dataclass(frozen=True, eq=False)
class Observation:
    """One egocentric sensor reading: per-ray depth and semantic label plus true and odometry poses."""
    depth: np.ndarray
    semantic: np.ndarray
    pose_gt: Pose
    odom: Pose

    def __post_init__(self):
        if self.depth.shape != self.semantic.shape:
            raise ValueError('Depth and semantic arrays must have the same length.')


@dataclass(frozen=True)
class Episode:
    scene: Scene
    start: Pose
    instruction: tuple
    goal_position: tuple
    goal_label: str
    success_radius: float = 3.0
    max_steps: int = 60
    episode_id: str = ''
    geodesic_distance: float = None

    def __post_init__(self):
        object.__setattr__(self, 'instruction', tuple(self.instruction))
        object.__setattr__(self, 'goal_position', (float(self.goal_position[0]), float(self.goal_position[1])))
        if self.goal_label not in {lm.label for lm in self.scene.landmarks}:
            raise ValueError(f'Goal label {self.goal_label!r} is not a landmark of the scene.')
        if not self.instruction or self.instruction[-1] != self.goal_label:
            raise ValueError('The instruction must end with the goal token.')

    def to_dict(self):
        return {
            'format': EPISODE_FORMAT,
            'version': FORMAT_VERSION,
            'episode_id': self.episode_id,
            'scene': self.scene.to_dict(),
            'start': self.start.to_list(),
            'instruction': list(self.instruction),
            'goal_position': list(self.goal_position),
            'goal_label': self.goal_label,
            'success_radius': self.success_radius,
            'max_steps': self.max_steps,
            'geodesic_distance': self.geodesic_distance,
        }

    @classmethod
    def from_dict(cls, data):
        _check_format(data, EPISODE_FORMAT)
        return cls(Scene.from_dict(data['scene']), Pose.from_list(data['start']), data['instruction'],
                   data['goal_position'], data['goal_label'], data['success_radius'], data['max_steps'],
                   data['episode_id'], data['geodesic_distance'])


def _check_format(data, expected):
    if data.get('format') != expected:
        raise ValueError(f'Expected a {expected!r} document, got {data.get("format")!r}.')
    if data.get('version') != FORMAT_VERSION:
        raise ValueError(f'Unsupported {expected} version {data.get("version")!r}.')


def sense(scene, pose, sensor, odom=None):
    """Casts the sensor fan from ``pose`` and labels the first hit of every ray.

    Args:
        scene (Scene): the ground-truth scene
        pose (Pose): true sensor pose, must lie inside the scene bounds
        sensor (SensorConfig): the ray fan
        odom (Pose): odometry estimate stored alongside, defaults to ``pose``

    Returns:
        Observation: depth in (0, d_max], semantic label per ray
    """
    if not scene.contains(pose.x, pose.y):
        raise SensingError(f'Cannot sense from ({pose.x:.3f}, {pose.y:.3f}): outside the scene bounds.')
    angles = np.ascontiguousarray(pose.theta + sensor.ray_angles())
    depth = np.empty(sensor.n_rays)
    hit = np.empty(sensor.n_rays, dtype=np.int64)
    _numba_funcs.cast_rays(pose.x, pose.y, angles, scene.segments, ~scene.deceptive, scene.discs,
                           float(sensor.d_max), depth, hit)
    labels = np.array([lm.label for lm in scene.landmarks] + [NONE, WALL])
    # NO_HIT (-2) and WALL_HIT (-1) index the two trailing labels, in that order
    semantic = labels[np.where(hit >= 0, hit, len(scene.landmarks) + 2 + hit)]
    return Observation(depth, semantic, pose, pose if odom is None else odom)


def step(scene, pose, action, motion_noise=None, rng=None, limits=None, footprint=0.2):
    """Executes one action in the simulator.

    The commanded motion is integrated, perturbed by the actuation noise and
    then swept against all walls (deceptive ones included). On contact the
    motion is truncated ``footprint`` meters before the wall.

    Returns:
        tuple: (new Pose, collided flag)
    """
    target = integrate_poses(pose, [action], limits or PlatformLimits())[0]
    if action.is_stop:
        return pose, False
    if motion_noise is not None and rng is not None:
        if motion_noise.sigma_trans > 0 or motion_noise.sigma_rot > 0:
            nx, ny = rng.normal(0.0, motion_noise.sigma_trans, size=2)
            nth = rng.normal(0.0, motion_noise.sigma_rot)
            target = Pose(target.x + nx, target.y + ny, target.theta + nth)
    length = pose.distance_to(target)
    if length <= 0.0:
        return target, False
    t = _numba_funcs.first_contact(pose.x, pose.y, target.x, target.y, scene.segments)
    if not np.isfinite(t):
        return target, False
    travel = max(0.0, t * length - footprint) / length
    moved = Pose(pose.x + travel * (target.x - pose.x), pose.y + travel * (target.y - pose.y), target.theta)
    logger.debug('Collision at (%.3f, %.3f), truncated to %.1f%% of the step.', moved.x, moved.y, 100 * travel)
    return moved, True


def _split_wall(fixed, lo, hi, gaps, vertical):
    """Segments covering [lo, hi] on a wall line minus the door gaps."""
    segments = []
    cursor = lo
    for g0, g1 in sorted(gaps):
        if g0 - cursor > 1e-6:
            segments.append((cursor, g0))
        cursor = max(cursor, g1)
    if hi - cursor > 1e-6:
        segments.append((cursor, hi))
    if vertical:
        return [(fixed, a, fixed, b) for a, b in segments]
    return [(a, fixed, b, fixed) for a, b in segments]


def _jittered_splits(rng, total, count, jitter):
    weights = 1.0 + rng.uniform(-jitter, jitter, size=count)
    return np.concatenate(([0.0], np.cumsum(weights / weights.sum() * total)))


def generate_scene(spec, seed):
    """Generates a connected room layout with doorways and landmarks.

    Rooms are laid out in rows (``ceil(sqrt(n))`` columns, the last row holds
    the remainder) with jittered boundaries. A random spanning tree over the
    room adjacency guarantees connectivity; every other adjacency receives an
    extra door with probability ``extra_door_prob``.

    Args:
        spec (GeneratorConfig): layout parameters
        seed (int): RNG seed, the scene is a pure function of (spec, seed)

    Returns:
        Scene: the generated scene
    """
    rng = np.random.default_rng(seed)
    width, height = spec.width, spec.height
    cols = int(math.ceil(math.sqrt(spec.rooms)))
    rows = int(math.ceil(spec.rooms / cols))
    counts = [cols] * (rows - 1) + [spec.rooms - cols * (rows - 1)]
    margin = 0.3
    min_side = max(spec.min_room_size, spec.door_width + 2 * margin)
    if height / rows < min_side or width / max(counts) < min_side:
        raise GenerationError(f'{spec.rooms} rooms of at least {min_side} m do not fit in {width} x {height} m.')

    ys = _jittered_splits(rng, height, rows, spec.jitter)
    rooms = []
    row_of = []
    for r, count in enumerate(counts):
        xs = _jittered_splits(rng, width, count, spec.jitter)
        for c in range(count):
            rooms.append((xs[c], ys[r], xs[c + 1], ys[r + 1]))
            row_of.append(r)
    if min(min(x1 - x0, y1 - y0) for x0, y0, x1, y1 in rooms) < min_side:
        raise GenerationError('Jittered room layout violates the minimal room size.')

    # candidate doors: (a, b, line, lo, hi, vertical)
    edges = []
    for a, (ax0, ay0, ax1, ay1) in enumerate(rooms):
        for b in range(a + 1, len(rooms)):
            bx0, by0, bx1, by1 = rooms[b]
            if row_of[a] == row_of[b] and abs(ax1 - bx0) < 1e-9:
                edges.append((a, b, ax1, ay0, ay1, True))
            elif row_of[b] == row_of[a] + 1:
                lo, hi = max(ax0, bx0), min(ax1, bx1)
                if hi - lo >= spec.door_width + 2 * margin:
                    edges.append((a, b, ay1, lo, hi, False))

    parent = list(range(len(rooms)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    doors = []
    for k in rng.permutation(len(edges)):
        a, b, line, lo, hi, vertical = edges[k]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
        elif rng.random() >= spec.extra_door_prob:
            continue
        center = rng.uniform(lo + margin + spec.door_width / 2, hi - margin - spec.door_width / 2)
        doors.append((a, b, line, center, vertical))
    if len({find(i) for i in range(len(rooms))}) > 1:
        raise GenerationError('Room adjacency graph is not connected.')

    half = spec.door_width / 2
    segments = [(0.0, 0.0, width, 0.0), (width, 0.0, width, height),
                (width, height, 0.0, height), (0.0, height, 0.0, 0.0)]
    for a, b, line, lo, hi, vertical in edges:
        if not vertical:
            continue
        gaps = [(c - half, c + half) for da, db, _, c, v in doors if (da, db) == (a, b)]
        segments += _split_wall(line, lo, hi, gaps, True)
    for r in range(rows - 1):
        line = ys[r + 1]
        gaps = [(c - half, c + half) for a, b, ln, c, v in doors if not v and row_of[a] == r]
        segments += _split_wall(line, 0.0, width, gaps, False)

    deceptive = np.zeros(len(segments), dtype=bool)
    interior = np.arange(4, len(segments))
    if spec.deceptive_walls > len(interior):
        raise GenerationError('More deceptive walls requested than interior wall segments exist.')
    deceptive[rng.choice(interior, size=spec.deceptive_walls, replace=False)] = True

    if spec.landmarks > len(spec.vocabulary):
        raise GenerationError('Not enough distinct landmark labels in the vocabulary.')
    labels = rng.choice(np.array(spec.vocabulary), size=spec.landmarks, replace=False)
    door_points = [(c, line) if not v else (line, c) for _, _, line, c, v in doors]
    landmarks = []
    for label in labels:
        pad = spec.landmark_radius + 0.5
        for _ in range(200):
            x0, y0, x1, y1 = rooms[rng.integers(len(rooms))]
            x = rng.uniform(x0 + pad, x1 - pad)
            y = rng.uniform(y0 + pad, y1 - pad)
            if any(math.hypot(x - lm.x, y - lm.y) < 2 * spec.landmark_radius + 0.8 for lm in landmarks):
                continue
            if any(math.hypot(x - dx, y - dy) < spec.door_width + pad for dx, dy in door_points):
                continue
            landmarks.append(Landmark(str(label), float(x), float(y), spec.landmark_radius))
            break
        else:
            raise GenerationError(f'Could not place landmark {label!r}.')

    doorways = [(a, b, c, line) if not v else (a, b, line, c) for a, b, line, c, v in doors]
    logger.debug('Generated scene seed=%d with %d rooms, %d walls, %d doors.', seed, len(rooms), len(segments),
                 len(doors))
    return Scene((width, height), segments, landmarks, deceptive, rooms, doorways, seed)


@dataclass(frozen=True)
class EpisodeConfig:
    """Episode sampling parameters: success radius, step budget and start constraints (meters)."""
    success_radius: float = 3.0
    max_steps: int = 60
    min_goal_distance: float = 4.0
    start_clearance: float = 0.5

    def __post_init__(self):
        if not self.success_radius > 0 or self.max_steps < 1:
            raise ValueError('Episodes need a positive success radius and at least one step.')


def generate_episode(scene, rng, cfg=None, episode_id=''):
    """Samples a start pose, a goal landmark and its instruction in a scene.

    The instruction lists the other landmarks of the goal room, nearest to the
    start first, followed by the goal token. Starts keep ``start_clearance``
    from every wall, stay off the landmark discs and lie at least
    ``min_goal_distance`` from the goal.

    Args:
        scene (Scene): a scene with at least one landmark
        rng (np.random.Generator): the sampling stream
        cfg (EpisodeConfig): sampling parameters
        episode_id (str): identifier stored in the episode

    Returns:
        Episode: the sampled episode, its geodesic distance left unset
    """
    cfg = cfg or EpisodeConfig()
    if not scene.landmarks:
        raise GenerationError('Cannot sample an episode in a scene without landmarks.')
    goal = scene.landmarks[rng.integers(len(scene.landmarks))]
    regions = scene.rooms or ((0.0, 0.0) + scene.bounds,)
    for _ in range(500):
        x0, y0, x1, y1 = regions[rng.integers(len(regions))]
        x = rng.uniform(x0, x1)
        y = rng.uniform(y0, y1)
        if scene.clearance(x, y) < cfg.start_clearance:
            continue
        if any(math.hypot(x - lm.x, y - lm.y) < lm.radius + cfg.start_clearance for lm in scene.landmarks):
            continue
        if math.hypot(x - goal.x, y - goal.y) < cfg.min_goal_distance:
            continue
        start = Pose(x, y, rng.uniform(-math.pi, math.pi))
        break
    else:
        raise GenerationError(f'No valid start found for goal {goal.label!r}.')
    room = scene.room_of(goal.x, goal.y)
    context = [lm for lm in scene.landmarks if lm is not goal and room >= 0 and scene.room_of(lm.x, lm.y) == room]
    context.sort(key=lambda lm: (math.hypot(lm.x - start.x, lm.y - start.y), lm.label))
    instruction = [lm.label for lm in context] + [goal.label]
    return Episode(scene, start, instruction, (goal.x, goal.y), goal.label, cfg.success_radius, cfg.max_steps,
                   episode_id)
