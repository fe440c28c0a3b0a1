"""imaginav module containing online occupancy mapping, frontier extraction and candidate generation.
"""

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy import sparse
from scipy.sparse import csgraph

from . import _numba_funcs
from .geometry import Action, Pose, integrate_poses, resample_to_horizon


logger = logging.getLogger(__name__)

UNKNOWN = 0
FREE = 1
OCCUPIED = 2
FRONTIER = 'frontier'
ROTATION = 'rotation'
STOP = 'stop'
GROWTH_WARNING_CELLS = 2000


@dataclass(frozen=True)
class MappingConfig:
    """Occupancy mapping and base-planner parameters.

    The base score of a frontier candidate is
    ``w_size * log(1 + frontier size) - w_dist * path cost``; rotation scans
    score ``b_rot``.
    """
    resolution: float = 0.15
    l_free: float = -0.4
    l_occ: float = 0.85
    l_max: float = 5.0
    free_threshold: float = -0.2
    occ_threshold: float = 0.2
    grow_chunk: int = 40
    min_frontier_cells: int = 3
    unknown_cost: float = 1.5
    inflation_radius: float = 0.3
    inflation_cost: float = 5.0
    w_size: float = 1.0
    w_dist: float = 0.25
    b_rot: float = 0.1
    rotation_angles: tuple = (math.pi / 4, -math.pi / 4, math.pi / 2, -math.pi / 2)

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError('Map resolution must be positive.')
        if not (self.l_free < 0 < self.l_occ and self.l_max > 0):
            raise ValueError('Log-odds increments need l_free < 0 < l_occ and a positive clamp.')
        if self.unknown_cost < 1 or self.inflation_cost < 1:
            raise ValueError('Traversal cost factors must be at least one.')
        object.__setattr__(self, 'rotation_angles', tuple(self.rotation_angles))


class OccupancyGrid:
    """Log-odds occupancy grid over the odometry frame.

    Cell (i, j) covers ``[ox + i * res, ox + (i + 1) * res) x [oy + j * res, oy + (j + 1) * res)``
    where ``(ox, oy)`` is the origin. The grid grows on demand.
    """
    def __init__(self, config=None, origin=(0.0, 0.0), shape=(1, 1), log_odds=None):
        self._config = config or MappingConfig()
        self._origin = (float(origin[0]), float(origin[1]))
        if log_odds is None:
            log_odds = np.zeros(shape)
        self._log_odds = np.array(log_odds, dtype=np.float64)

    @classmethod
    def around(cls, pose, radius, config=None):
        """An empty grid covering a square of half-width ``radius`` around a pose."""
        config = config or MappingConfig()
        n = int(math.ceil(2 * radius / config.resolution))
        return cls(config, (pose.x - radius, pose.y - radius), (n, n))

    @property
    def config(self):
        return self._config

    @property
    def resolution(self):
        """The cell size in meters."""
        return self._config.resolution

    @property
    def origin(self):
        """World coordinates of the lower corner of cell (0, 0)."""
        return self._origin

    @property
    def shape(self):
        return self._log_odds.shape

    @property
    def log_odds(self):
        return self._log_odds

    def copy(self):
        return OccupancyGrid(self._config, self._origin, log_odds=self._log_odds.copy())

    def states(self):
        """Tri-state array (UNKNOWN, FREE, OCCUPIED) derived from the log-odds thresholds."""
        states = np.full(self.shape, UNKNOWN, dtype=np.int8)
        states[self._log_odds < self._config.free_threshold] = FREE
        states[self._log_odds > self._config.occ_threshold] = OCCUPIED
        return states

    def world_to_cell(self, x, y):
        return (int(math.floor((x - self._origin[0]) / self.resolution)),
                int(math.floor((y - self._origin[1]) / self.resolution)))

    def cell_center(self, i, j):
        return (self._origin[0] + (i + 0.5) * self.resolution, self._origin[1] + (j + 0.5) * self.resolution)

    def cell_centers(self, cells):
        cells = np.asarray(cells, dtype=np.float64)
        return np.asarray(self._origin) + (cells + 0.5) * self.resolution

    def in_bounds(self, i, j):
        return 0 <= i < self.shape[0] and 0 <= j < self.shape[1]

    def ensure_contains(self, xmin, ymin, xmax, ymax):
        """Grows the grid (in chunks of ``grow_chunk`` cells) until it covers the box."""
        i0, j0 = self.world_to_cell(xmin, ymin)
        i1, j1 = self.world_to_cell(xmax, ymax)
        chunk = self._config.grow_chunk
        pad_lo_i = chunk * math.ceil(-i0 / chunk) if i0 < 0 else 0
        pad_lo_j = chunk * math.ceil(-j0 / chunk) if j0 < 0 else 0
        pad_hi_i = chunk * math.ceil((i1 - self.shape[0] + 1) / chunk) if i1 >= self.shape[0] else 0
        pad_hi_j = chunk * math.ceil((j1 - self.shape[1] + 1) / chunk) if j1 >= self.shape[1] else 0
        if pad_lo_i or pad_lo_j or pad_hi_i or pad_hi_j:
            self._log_odds = np.pad(self._log_odds, ((pad_lo_i, pad_hi_i), (pad_lo_j, pad_hi_j)))
            self._origin = (self._origin[0] - pad_lo_i * self.resolution,
                            self._origin[1] - pad_lo_j * self.resolution)
            logger.debug('Occupancy grid grown to %s cells.', self.shape)
            if max(self.shape) > GROWTH_WARNING_CELLS:
                warnings.warn(f'Occupancy grid has grown to {self.shape} cells.')

    def to_pgm_array(self):
        """Grayscale rendering: Unknown 128, Free 255, Occupied 0 (uint8, rows along y)."""
        states = self.states()
        image = np.full(states.shape, 128, dtype=np.uint8)
        image[states == FREE] = 255
        image[states == OCCUPIED] = 0
        return np.flipud(image.T)


@dataclass(frozen=True, eq=False)
class Frontier:
    """Connected set of Free cells bordering Unknown space."""
    cells: np.ndarray
    centroid: tuple
    size: int


@dataclass(frozen=True, eq=False)
class CandidateTrajectory:
    """An H-step action sequence with its pose chain C(A), proposed by the base planner.

    ``path_cost`` is the length in meters of the whole shortest path to the
    target frontier, before it is cut to the horizon.
    """
    actions: tuple
    poses: tuple
    kind: str
    target_frontier: Frontier = None
    path_cost: float = 0.0
    rotation: float = 0.0

    @property
    def is_stop(self):
        return self.kind == STOP

    def sort_key(self):
        if self.target_frontier is None:
            return (self.path_cost, math.inf, math.inf)
        return (self.path_cost,) + tuple(self.target_frontier.centroid)


def update_map(grid, obs, sensor):
    """Integrates a depth observation, taken at its odometry pose, into a copy of the grid.

    Cells traversed by a ray receive free evidence, the end cell of a ray that
    stopped before ``d_max`` receives occupied evidence. Max-range rays leave
    their end cell untouched.

    Args:
        grid (OccupancyGrid): the current map
        obs (Observation): the observation, its ``odom`` pose is used
        sensor (SensorConfig): provides the ray angles and the range

    Returns:
        OccupancyGrid: the updated map
    """
    grid = grid.copy()
    pose = obs.odom
    angles = pose.theta + sensor.ray_angles()
    ex = pose.x + obs.depth * np.cos(angles)
    ey = pose.y + obs.depth * np.sin(angles)
    margin = grid.resolution
    grid.ensure_contains(min(pose.x, ex.min()) - margin, min(pose.y, ey.min()) - margin,
                         max(pose.x, ex.max()) + margin, max(pose.y, ey.max()) + margin)
    res = grid.resolution
    ends = np.stack((np.floor((ex - grid.origin[0]) / res), np.floor((ey - grid.origin[1]) / res)),
                    axis=1).astype(np.int64)
    hits = obs.depth < sensor.d_max - 1e-9
    i0, j0 = grid.world_to_cell(pose.x, pose.y)
    cfg = grid.config
    _numba_funcs.integrate_rays(grid.log_odds, i0, j0, np.ascontiguousarray(ends), hits,
                                cfg.l_free, cfg.l_occ, cfg.l_max)
    return grid


def extract_frontiers(grid):
    """Maximal 8-connected components of Free cells with an Unknown 4-neighbour.

    Cells beyond the grid border count as Unknown. Components smaller than
    ``min_frontier_cells`` are dropped.

    Returns:
        list of Frontier: sorted by size (descending), then centroid x, then centroid y
    """
    states = grid.states()
    unknown = np.pad(states == UNKNOWN, 1, constant_values=True)
    touches = unknown[:-2, 1:-1] | unknown[2:, 1:-1] | unknown[1:-1, :-2] | unknown[1:-1, 2:]
    mask = (states == FREE) & touches
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    frontiers = []
    for label in range(1, count + 1):
        cells = np.argwhere(labels == label)
        if len(cells) < grid.config.min_frontier_cells:
            continue
        centroid = grid.cell_centers(cells).mean(axis=0)
        frontiers.append(Frontier(cells, (float(centroid[0]), float(centroid[1])), len(cells)))
    frontiers.sort(key=lambda f: (-f.size, f.centroid[0], f.centroid[1]))
    return frontiers


def grid_graph(cost, blocked, resolution):
    """Undirected 8-connected graph over a cost raster.

    Edge weights are the step length times the mean cost of the two cells.
    Diagonal steps are only allowed when both side cells are open.

    Returns:
        scipy.sparse.csr_matrix: N x N adjacency with N = cost.size (row-major)
    """
    nx, ny = cost.shape
    index = np.arange(nx * ny).reshape(nx, ny)
    open_ = ~blocked
    rows, cols, weights = [], [], []
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        a = (slice(0, nx - di), slice(max(0, -dj), ny - max(0, dj)))
        b = (slice(di, nx), slice(max(0, dj), ny - max(0, -dj)))
        ok = open_[a] & open_[b]
        if di and dj:
            side_i = (slice(di, nx), a[1])
            side_j = (a[0], b[1])
            ok &= open_[side_i] & open_[side_j]
        step = resolution * math.hypot(di, dj)
        rows.append(index[a][ok])
        cols.append(index[b][ok])
        weights.append(step * 0.5 * (cost[a][ok] + cost[b][ok]))
    n = nx * ny
    return sparse.csr_matrix((np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def _traversal_costs(grid, start_cell):
    states = grid.states()
    blocked = states == OCCUPIED
    cfg = grid.config
    cost = np.where(states == UNKNOWN, cfg.unknown_cost, 1.0)
    if blocked.any():
        clearance = ndimage.distance_transform_edt(~blocked) * grid.resolution
        cost = np.where(clearance <= cfg.inflation_radius, cost * cfg.inflation_cost, cost)
    if grid.in_bounds(*start_cell):
        blocked[start_cell] = False
    return cost, blocked


def _reconstruct(predecessors, start, target):
    chain = [target]
    while chain[-1] != start:
        prev = predecessors[chain[-1]]
        if prev < 0:
            return None
        chain.append(prev)
    return chain[::-1]


def _truncate(points, reach):
    """Cuts a polyline after ``reach`` meters of length."""
    out = [points[0]]
    travelled = 0.0
    for p in points[1:]:
        seg = math.hypot(p[0] - out[-1][0], p[1] - out[-1][1])
        if travelled + seg >= reach:
            f = (reach - travelled) / seg if seg > 0 else 0.0
            out.append((out[-1][0] + f * (p[0] - out[-1][0]), out[-1][1] + f * (p[1] - out[-1][1])))
            return out
        travelled += seg
        out.append(p)
    return out


def _path_poses(odom, points):
    poses = [odom]
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        poses.append(Pose(x1, y1, math.atan2(y1 - y0, x1 - x0)))
    return poses


def rotation_candidate(odom, angle, horizon, limits):
    actions = []
    remaining = angle
    max_r = limits.max_rotation()
    for _ in range(horizon):
        turn = min(max(remaining, -max_r), max_r)
        remaining -= turn
        actions.append(Action(0.0, 0.0, turn, 1.0))
    poses = integrate_poses(odom, actions, limits)
    return CandidateTrajectory(tuple(actions), tuple(poses), ROTATION, rotation=angle)


def stop_candidate(odom):
    return CandidateTrajectory((Action.stop(),), (odom,), STOP)


def base_score(candidate, config=None, stop_bonus=None):
    """The planner's native score S_base of a candidate.

    Args:
        candidate (CandidateTrajectory): the candidate to score
        config (MappingConfig): weights w_size, w_dist and the rotation bonus b_rot
        stop_bonus (float): score of an armed STOP candidate, None keeps STOP disarmed

    Returns:
        float: the score, ``-inf`` for a disarmed STOP
    """
    config = config or MappingConfig()
    if candidate.kind == STOP:
        return -math.inf if stop_bonus is None else float(stop_bonus)
    if candidate.kind == ROTATION or candidate.target_frontier is None:
        return config.b_rot
    return config.w_size * math.log1p(candidate.target_frontier.size) - config.w_dist * candidate.path_cost


def candidates(grid, odom, k, limits, horizon):
    """Proposes up to ``k`` candidate trajectories from the current map.

    Frontiers are reached by 8-connected shortest paths over Free and Unknown
    cells (Unknown cost-inflated, cells near obstacles further inflated,
    Occupied blocked). One search from the agent cell serves every frontier;
    each frontier is targeted at its reachable cell nearest to its centroid.
    Paths are cut to ``H * v_max * dt_ctrl`` meters and resampled to H feasible
    actions. Slots left after the frontiers are padded with in-place rotation
    scans; the last slot always holds the STOP candidate when ``k >= 2``.

    Args:
        grid (OccupancyGrid): the current map
        odom (Pose): the agent pose in the map frame
        k (int): maximal number of candidates
        limits (PlatformLimits): platform limits
        horizon (int): the number H of actions per candidate

    Returns:
        list of CandidateTrajectory: deterministic order, frontier candidates by
        (base score desc, path cost asc, centroid x, centroid y), then rotations,
        then STOP
    """
    if k < 1:
        raise ValueError('At least one candidate must be requested.')
    cfg = grid.config
    frontier_cands = []
    frontiers = extract_frontiers(grid)
    start_cell = grid.world_to_cell(odom.x, odom.y)
    if frontiers and grid.in_bounds(*start_cell):
        cost, blocked = _traversal_costs(grid, start_cell)
        graph = grid_graph(cost, blocked, grid.resolution)
        start = int(np.ravel_multi_index(start_cell, grid.shape))
        dist, predecessors = csgraph.dijkstra(graph, directed=False, indices=start, return_predecessors=True)
        reach = horizon * limits.max_translation()
        for frontier in frontiers:
            flat = np.ravel_multi_index(frontier.cells.T, grid.shape)
            costs = dist[flat]
            reachable = np.isfinite(costs)
            if not reachable.any():
                continue
            offsets = grid.cell_centers(frontier.cells) - np.asarray(frontier.centroid)
            spread = np.where(reachable, np.hypot(offsets[:, 0], offsets[:, 1]), np.inf)
            target = int(flat[np.lexsort((costs, spread))[0]])
            chain = _reconstruct(predecessors, start, target)
            if chain is None or len(chain) < 2:
                continue
            cells = np.column_stack(np.unravel_index(chain[1:], grid.shape))
            points = [(odom.x, odom.y)] + [tuple(c) for c in grid.cell_centers(cells)]
            length = float(np.hypot(*np.diff(np.asarray(points), axis=0).T).sum())
            path = _path_poses(odom, _truncate(points, reach))
            with warnings.catch_warnings():
                warnings.simplefilter('ignore')
                actions, degenerate = resample_to_horizon(path, horizon, limits)
            if degenerate:
                continue
            poses = integrate_poses(odom, actions, limits)
            frontier_cands.append(CandidateTrajectory(tuple(actions), tuple(poses), FRONTIER, frontier, length))
        frontier_cands.sort(key=lambda c: (-base_score(c, cfg),) + c.sort_key())
    rotations = [rotation_candidate(odom, angle, horizon, limits) for angle in cfg.rotation_angles]
    if k == 1:
        return (frontier_cands + rotations + [stop_candidate(odom)])[:1]
    chosen = (frontier_cands + rotations)[:k - 1] + [stop_candidate(odom)]
    logger.debug('%d frontiers, %d frontier candidates, %d candidates returned.', len(frontiers),
                 len(frontier_cands), len(chosen))
    return chosen
