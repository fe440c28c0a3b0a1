"""imaginav module containing the imagination-to-value head and the language prior.

All value maps live on a fixed egocentric grid centred on the agent: axis ``i``
points forward along the agent heading, axis ``j`` to the left, and the centre
of cell ``(i, j)`` lies at ``((i - side / 2) * cell, (j - side / 2) * cell)``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy import special

from . import _numba_funcs
from .geometry import Pose


GRID_SIDE = 80
GRID_WINDOW = 12.0


@dataclass(frozen=True)
class CueWeights:
    """Weights of the three dense frame cues and the frame temperature.

    ``d_near`` is the depth under which a ray counts as an imminent obstacle,
    ``sigma_ceiling`` the depth standard deviation (meters) that saturates the
    uncertainty penalty.
    """
    w_align: float = 1.0
    w_trav: float = 0.5
    w_obs: float = 0.5
    t_frame: float = 1.0
    d_near: float = 0.5
    sigma_ceiling: float = 1.0

    def __post_init__(self):
        if min(self.w_align, self.w_trav, self.w_obs) < 0:
            raise ValueError('Cue weights must be non-negative.')
        if not (self.t_frame > 0 and self.sigma_ceiling > 0):
            raise ValueError('Frame temperature and uncertainty ceiling must be positive.')


@dataclass(frozen=True)
class FusionParams:
    """Score-fusion parameters: discount, LSE temperature, fusion weights, gate and prior temperature."""
    gamma: float = 0.9
    beta: float = 16.0
    lambda1: float = 1.0
    lambda2: float = 0.5
    theta: float = 0.6
    t_prior: float = 0.1

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError('The discount gamma must lie in (0, 1].')
        if not self.beta > 0 or not self.t_prior > 0:
            raise ValueError('Temperatures must be positive.')
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError('Fusion weights must be non-negative.')
        if not 0 <= self.theta <= 1:
            raise ValueError('The gate threshold theta is a percentile in [0, 1].')


class EgoGrid:
    """Fixed egocentric scalar field with a field-of-view mask.

    Args:
        values (2D array of floats): side x side values
        fov_mask (2D array of bools): cells that may hold evidence, all True by default
        window (float): edge length of the covered square in meters
    """
    def __init__(self, values, fov_mask=None, window=GRID_WINDOW):
        self._values = np.array(values, dtype=np.float64)
        if self._values.ndim != 2 or self._values.shape[0] != self._values.shape[1]:
            raise ValueError('Egocentric grids are square.')
        if fov_mask is None:
            fov_mask = np.ones(self._values.shape, dtype=bool)
        self._fov_mask = np.array(fov_mask, dtype=bool)
        self._window = float(window)

    @classmethod
    def zeros(cls, side=GRID_SIDE, window=GRID_WINDOW, fov_mask=None):
        return cls(np.zeros((side, side)), fov_mask, window)

    @property
    def values(self):
        return self._values

    @property
    def fov_mask(self):
        return self._fov_mask

    @property
    def side(self):
        return self._values.shape[0]

    @property
    def window(self):
        return self._window

    @property
    def cell(self):
        """Cell size in meters."""
        return self._window / self.side

    @property
    def half(self):
        """Index of the agent cell along both axes."""
        return self.side / 2.0

    def copy(self):
        return EgoGrid(self._values.copy(), self._fov_mask.copy(), self._window)

    def with_values(self, values):
        return EgoGrid(values, self._fov_mask, self._window)

    def finalize(self):
        """Clamps values to [0, 1] and zeroes cells outside the mask."""
        return self.with_values(np.where(self._fov_mask, np.clip(self._values, 0.0, 1.0), 0.0))

    def cell_centers(self):
        coords = (np.arange(self.side) - self.half) * self.cell
        return np.meshgrid(coords, coords, indexing='ij')


def fov_wedge_mask(apexes, fov, d_max, side=GRID_SIDE, window=GRID_WINDOW):
    """Union of the sensor wedges seen from a set of egocentric poses.

    A cell belongs to a wedge when its centre lies within ``d_max`` plus one
    cell of the apex and within half the field of view, widened by the angle
    one cell subtends at that distance.
    """
    grid = EgoGrid.zeros(side, window)
    xs, ys = grid.cell_centers()
    cell = grid.cell
    mask = np.zeros((side, side), dtype=bool)
    for apex in apexes:
        dx = xs - apex.x
        dy = ys - apex.y
        dist = np.hypot(dx, dy)
        bearing = np.arctan2(dy, dx) - apex.theta
        bearing = np.abs(np.mod(bearing + np.pi, 2 * np.pi) - np.pi)
        slack = np.arctan2(cell, np.maximum(dist, cell))
        mask |= ((dist <= d_max + cell) & (bearing <= fov / 2 + slack)) | (dist <= cell)
    return mask


def alignment_scores(semantic, instruction):
    """Token-match stand-in for text-vision similarity.

    1 for the goal token (last instruction token), 0.5 for any other
    instruction token, 0 otherwise.
    """
    semantic = np.asarray(semantic)
    if not instruction:
        return np.zeros(semantic.shape)
    goal = instruction[-1]
    others = [tok for tok in instruction[:-1] if tok != goal]
    scores = np.where(np.isin(semantic, others), 0.5, 0.0)
    return np.where(semantic == goal, 1.0, scores)


def frame_confidence(frame, instruction, weights, d_max=12.0):
    """Scores every ray of an imagined frame by three dense cues.

    ``align`` is the instruction match of the ray label, ``trav`` the
    normalized free range and ``obs`` the penalty ``-min(sigma / ceiling, 1)``
    minus one for rays closer than ``d_near``. The weighted sum is
    temperature-scaled and squashed by a logistic, then shifted and scaled so
    that the most favourable ray without instruction evidence maps to 0 and
    the most favourable goal ray to 1. Rays matching no instruction token
    carry no value; traversability and risk only modulate the evidence of
    instruction landmarks.

    Returns:
        np.ndarray: R confidences in [0, 1]
    """
    align = alignment_scores(frame.semantic, instruction)
    trav = np.minimum(frame.depth / d_max, 1.0)
    occ = (frame.depth < weights.d_near).astype(np.float64)
    obs = -np.minimum(frame.per_ray_sigma / weights.sigma_ceiling, 1.0) - occ
    z = (weights.w_align * align + weights.w_trav * trav + weights.w_obs * obs) / weights.t_frame
    lo = special.expit(weights.w_trav / weights.t_frame)
    hi = special.expit((weights.w_align + weights.w_trav) / weights.t_frame)
    if hi - lo <= 0:
        return np.zeros(z.shape)
    return np.clip((special.expit(z) - lo) / (hi - lo), 0.0, 1.0)


def _ray_points(rel, depth, ray_angles, step=None):
    """Ego coordinates of ray end points, or of samples every ``step`` meters up to them.

    Returns the coordinates, the owning ray of every point and its fraction
    of the ray depth.
    """
    angles = rel.theta + ray_angles
    c = np.cos(angles)
    s = np.sin(angles)
    if step is None:
        return rel.x + depth * c, rel.y + depth * s, np.arange(len(depth)), np.ones(len(depth))
    counts = np.floor(depth / step).astype(int) + 1
    owner = np.repeat(np.arange(len(depth)), counts)
    first = np.repeat(np.cumsum(counts) - counts, counts)
    t = np.minimum((np.arange(counts.sum()) - first + 1) * step, depth[owner])
    frac = np.divide(t, depth[owner], out=np.ones_like(t), where=depth[owner] > 0)
    return rel.x + t * c[owner], rel.y + t * s[owner], owner, frac


def splat(frame, confidence, grid, agent_pose, ray_angles, additive=False, fan=False):
    """Projects per-ray confidences onto the egocentric grid.

    Each ray end point, expressed in the agent frame, deposits its confidence
    into the four surrounding cells with bilinear weights. Accumulation keeps
    the per-cell running maximum, or sums when ``additive``. With ``fan`` every
    cell-spaced sample along the ray deposits the confidence as well, scaled
    by its fraction of the ray depth: value rises along the free line of sight
    and peaks at the evidence. Points outside the window or whose nearest cell
    is masked out are dropped.

    Args:
        frame: object with ``pose`` (world frame) and ``depth`` (R rays)
        confidence (array of floats): R values to deposit
        grid (EgoGrid): the grid to deposit into, left unchanged
        agent_pose (Pose): the agent pose defining the egocentric frame
        ray_angles (array of floats): ray headings relative to the frame heading

    Returns:
        EgoGrid: a new grid
    """
    rel = frame.pose.relative_to(agent_pose)
    xs, ys, owner, frac = _ray_points(rel, np.asarray(frame.depth, dtype=np.float64), np.asarray(ray_angles),
                                      grid.cell if fan else None)
    out = grid.copy()
    us = np.ascontiguousarray(xs / grid.cell)
    vs = np.ascontiguousarray(ys / grid.cell)
    conf = np.ascontiguousarray(np.asarray(confidence, dtype=np.float64)[owner] * frac)
    _numba_funcs.splat_bilinear(out.values, us, vs, conf, grid.half, out.fov_mask, bool(additive))
    return out


def smooth(grid):
    """3 x 3 dilation followed by a 3 x 3 box blur, then the field-of-view mask again."""
    dilated = ndimage.maximum_filter(grid.values, size=3, mode='nearest')
    blurred = ndimage.uniform_filter(dilated, size=3, mode='nearest')
    return grid.with_values(np.where(grid.fov_mask, blurred, 0.0))


def aggregate(rollout_grids, params):
    """Discounted log-sum-exp over the projected frames of one rollout (V_img).

    Per cell ``V = LSE_beta{gamma^tau * g_tau}`` over the terms carrying
    evidence (strictly positive after discounting). Cells without evidence
    are exactly 0 and a single term passes through unchanged, so that
    ``max <= V <= max + log(n) / beta``.

    Args:
        rollout_grids (list of (int, EgoGrid)): projected frames with their step index tau
        params (FusionParams): gamma and beta

    Returns:
        EgoGrid: values clamped to [0, 1]
    """
    if not rollout_grids:
        raise ValueError('Cannot aggregate an empty rollout.')
    terms = np.stack([params.gamma ** tau * g.values for tau, g in rollout_grids])
    mask = np.logical_or.reduce([g.fov_mask for _, g in rollout_grids])
    present = terms > 0
    peak = terms.max(axis=0)
    with np.errstate(divide='ignore', invalid='ignore'):
        spread = special.logsumexp(params.beta * (terms - peak), axis=0, b=present.astype(np.float64))
    values = np.where(present.any(axis=0), peak + spread / params.beta, 0.0)
    return EgoGrid(values, mask, rollout_grids[0][1].window).finalize()


def gate(v_img, sigma_a, theta):
    """Disables imagination (all-zero grid) when the rollout uncertainty exceeds theta (strict)."""
    if sigma_a > theta:
        return v_img.with_values(np.zeros_like(v_img.values))
    return v_img


def prior_weights(obs, instruction, t_prior):
    """Softmax over rays of the instruction alignment scores at temperature ``t_prior``."""
    return special.softmax(alignment_scores(obs.semantic, instruction) / t_prior)


def prior_map(obs, instruction, template, t_prior, sensor):
    """Language prior V_prior from the live observation.

    The softmax weights of :func:`prior_weights` are splatted additively at the
    ray end points, smoothed and masked by the current sensor wedge.

    Args:
        obs (Observation): the live observation, its odometry pose is the ego frame
        instruction (sequence of str): the instruction tokens
        template (EgoGrid): provides side and window
        t_prior (float): softmax temperature
        sensor (SensorConfig): ray angles, field of view and range

    Returns:
        EgoGrid: the prior map
    """
    mask = fov_wedge_mask([_origin_pose()], sensor.fov, sensor.d_max, template.side, template.window)
    grid = EgoGrid.zeros(template.side, template.window, mask)
    frame = _LiveFrame(obs.odom, obs.depth)
    weights = prior_weights(obs, instruction, t_prior)
    grid = splat(frame, weights, grid, obs.odom, sensor.ray_angles(), additive=True)
    return smooth(grid).finalize()


def sample_path(grid, poses, gamma, agent_pose):
    """Discounted sum of bilinear grid samples along a pose chain.

    Returns ``sum_{tau=1..H} gamma^tau * V(pose_tau)``; poses outside the
    window contribute 0.
    """
    total = 0.0
    for tau, pose in enumerate(poses, start=1):
        rel = pose.relative_to(agent_pose)
        total += gamma ** tau * _numba_funcs.bilinear_sample(grid.values, rel.x / grid.cell, rel.y / grid.cell,
                                                             grid.half)
    return total


@dataclass(frozen=True, eq=False)
class ImaginedValue:
    """Output of the I2V head for one candidate."""
    grid: EgoGrid
    ungated: EgoGrid
    sigma_a: float
    gated: bool

    def path_value(self, poses, gamma, agent_pose):
        return sample_path(self.grid, poses, gamma, agent_pose)


@dataclass(frozen=True, eq=False)
class ImaginedScore:
    """Map-free imagination of one candidate: a single score for the whole rollout."""
    score: float
    sigma_a: float
    gated: bool

    def path_value(self, poses, gamma, agent_pose):
        return 0.0 if self.gated else self.score


def frame_score(rollout, instruction, weights, params, d_max=12.0):
    """Scores a rollout without projecting it into a value map.

    Every decoded frame contributes its best ray confidence discounted by
    ``gamma ** tau``, so the score tells whether the imagined views show the
    instruction, not where.

    Returns:
        ImaginedScore: the discounted sum, gated like the value map
    """
    score = sum(params.gamma ** frame.tau * float(frame_confidence(frame, instruction, weights, d_max).max())
                for frame in rollout.frames)
    return ImaginedScore(score, rollout.sigma_a, rollout.sigma_a > params.theta)


def imagination_to_value(rollout, instruction, agent_pose, sensor, weights, params, side=GRID_SIDE,
                         window=GRID_WINDOW, fan=True):
    """Scores, projects, smooths, aggregates and gates the frames of one rollout."""
    apexes = [frame.pose.relative_to(agent_pose) for frame in rollout.frames]
    mask = fov_wedge_mask(apexes, sensor.fov, sensor.d_max, side, window)
    template = EgoGrid.zeros(side, window, mask)
    angles = sensor.ray_angles()
    projected = []
    for frame in rollout.frames:
        conf = frame_confidence(frame, instruction, weights, sensor.d_max)
        projected.append((frame.tau, smooth(splat(frame, conf, template, agent_pose, angles, fan=fan))))
    v_img = aggregate(projected, params)
    return ImaginedValue(gate(v_img, rollout.sigma_a, params.theta), v_img, rollout.sigma_a,
                         rollout.sigma_a > params.theta)


def _origin_pose():
    return Pose(0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class _LiveFrame:
    pose: object
    depth: np.ndarray


def peak_distance(grid):
    """Distance (meters) from the agent to the nearest maximal cell, inf for an all-zero grid."""
    peak = grid.values.max()
    if not peak > 0:
        return math.inf
    xs, ys = grid.cell_centers()
    return float(np.hypot(xs, ys)[grid.values >= peak - 1e-12].min())
