"""imaginav module containing planar poses, the continuous action space and action embeddings.

Actions are egocentric: ``(dx, dy)`` is a displacement expressed in the frame of
the pose *before* the step, ``dtheta`` is applied after the translation and
``kappa`` scales the step duration used by the feasibility limits.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np


TIME_CODE_DIM = 8
MODE_RATIO = 0.5
SCALE_FLOOR = 1e-3
EMBEDDING_DIM = 5 + TIME_CODE_DIM + 1
_FEASIBILITY_TOL = 1e-9


def wrap_angle(theta):
    """Wraps an angle to the half-open interval (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


class FeasibilityError(ValueError):
    """Raised when an action violates the platform limits."""

    def __init__(self, index, action, limits):
        self.index = index
        super().__init__(f'Action {index} ({action.dx:.4f}, {action.dy:.4f}, {action.dtheta:.4f}, '
                         f'kappa={action.kappa:.3f}) exceeds the platform limits '
                         f'(v_max={limits.v_max}, omega_max={limits.omega_max}, dt_ctrl={limits.dt_ctrl}).')


@dataclass(frozen=True)
class Pose:
    """Agent state on the plane; ``theta`` is always wrapped to (-pi, pi]."""
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        for name in ('x', 'y', 'theta'):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f'Pose coordinate {name} must be finite, got {value}.')
            object.__setattr__(self, name, value)
        object.__setattr__(self, 'theta', wrap_angle(self.theta))

    @property
    def position(self):
        return np.array([self.x, self.y])

    def compose(self, dx, dy, dtheta):
        """Moves by a local-frame displacement, then turns by ``dtheta``."""
        c = math.cos(self.theta)
        s = math.sin(self.theta)
        return Pose(self.x + c * dx - s * dy, self.y + s * dx + c * dy, self.theta + dtheta)

    def relative_to(self, origin):
        """Expresses this pose in the frame of ``origin`` (returns a Pose)."""
        c = math.cos(origin.theta)
        s = math.sin(origin.theta)
        ddx = self.x - origin.x
        ddy = self.y - origin.y
        return Pose(c * ddx + s * ddy, -s * ddx + c * ddy, self.theta - origin.theta)

    def to_world(self, local):
        """Inverse of :meth:`relative_to`: maps a pose given in this frame to the world."""
        return self.compose(local.x, local.y, local.theta)

    def distance_to(self, other):
        return math.hypot(other.x - self.x, other.y - self.y)

    def to_list(self):
        return [self.x, self.y, self.theta]

    @classmethod
    def from_list(cls, values):
        return cls(*values)


@dataclass(frozen=True)
class PlatformLimits:
    """Kinematic limits of the platform (m/s, rad/s and the control period in seconds)."""
    v_max: float = 1.0
    omega_max: float = math.pi / 2.0
    dt_ctrl: float = 1.0

    def __post_init__(self):
        if not (self.v_max > 0 and self.omega_max > 0 and self.dt_ctrl > 0):
            raise ValueError('Platform limits must be strictly positive.')

    def max_translation(self, kappa=1.0):
        return self.v_max * kappa * self.dt_ctrl

    def max_rotation(self, kappa=1.0):
        return self.omega_max * kappa * self.dt_ctrl


@dataclass(frozen=True)
class Action:
    dx: float = 0.0
    dy: float = 0.0
    dtheta: float = 0.0
    kappa: float = 1.0
    is_stop: bool = False

    def __post_init__(self):
        if self.is_stop:
            if any(getattr(self, name) != 0 for name in ('dx', 'dy', 'dtheta', 'kappa')):
                raise ValueError('A STOP action must have all numeric fields equal to zero.')
        elif not self.kappa > 0:
            raise ValueError('The duration scale kappa must be strictly positive.')

    @classmethod
    def stop(cls):
        return cls(0.0, 0.0, 0.0, 0.0, True)

    @property
    def translation(self):
        """Length of the planar displacement (meters)."""
        return math.hypot(self.dx, self.dy)

    def to_list(self):
        return [self.dx, self.dy, self.dtheta, self.kappa, self.is_stop]

    @classmethod
    def from_list(cls, values):
        dx, dy, dtheta, kappa, is_stop = values
        return cls(dx, dy, dtheta, kappa, bool(is_stop))


def check_feasible(action, limits):
    """Returns True if the action respects the platform limits (STOP always does)."""
    if action.is_stop:
        return True
    return (action.translation <= limits.max_translation(action.kappa) + _FEASIBILITY_TOL
            and abs(action.dtheta) <= limits.max_rotation(action.kappa) + _FEASIBILITY_TOL)


def integrate_poses(start, actions, limits=None):
    """Integrates an action sequence into its pose chain C(A).

    Args:
        start (Pose): the pose before the first action
        actions (sequence of Action): the control sequence
        limits (PlatformLimits): feasibility limits, defaults to ``PlatformLimits()``

    Returns:
        list of Pose: one pose per action, the pose reached after that action
    """
    if limits is None:
        limits = PlatformLimits()
    if len(actions) == 0:
        raise ValueError('At least one action is required to integrate poses.')
    poses = []
    pose = start
    stopped = False
    for idx, action in enumerate(actions):
        if stopped:
            raise ValueError(f'Action {idx} follows a STOP action.')
        if not check_feasible(action, limits):
            raise FeasibilityError(idx, action, limits)
        if action.is_stop:
            stopped = True
        else:
            pose = pose.compose(action.dx, action.dy, action.dtheta)
        poses.append(pose)
    return poses


def clamp_action(dx, dy, dtheta, limits, kappa=1.0):
    """Scales a desired step into the feasible set, keeping the translation direction."""
    max_t = limits.max_translation(kappa)
    max_r = limits.max_rotation(kappa)
    length = math.hypot(dx, dy)
    if length > max_t:
        dx *= max_t / length
        dy *= max_t / length
    dtheta = min(max(dtheta, -max_r), max_r)
    return Action(dx, dy, dtheta, kappa)


def resample_to_horizon(path, horizon, limits=None):
    """Converts a pose path into exactly ``horizon`` feasible actions.

    The targets are arc-length uniform samples of the path (both end points
    included); headings are interpolated on the unwrapped heading sequence.
    Each step aims at the next target from the pose actually reached so far,
    so any motion removed by the feasibility clamp is carried forward into
    the following steps. A path without translation but with a heading change
    is split evenly by index.

    Args:
        path (sequence of Pose): the path to follow, first pose is the start
        horizon (int): the number H of actions to produce
        limits (PlatformLimits): feasibility limits

    Returns:
        tuple: (list of Action, bool flag that is True for a degenerate path)
    """
    if limits is None:
        limits = PlatformLimits()
    if len(path) < 2:
        raise ValueError('A path needs at least two poses to be resampled.')
    if horizon < 1:
        raise ValueError('The horizon must be at least one step.')
    xy = np.array([[p.x, p.y] for p in path])
    headings = np.unwrap(np.array([p.theta for p in path]))
    seg = np.hypot(*np.diff(xy, axis=0).T)
    s = np.concatenate(([0.0], np.cumsum(seg)))
    total = s[-1]
    if total < 1e-9:
        turn = headings[-1] - headings[0]
        if abs(turn) < 1e-9:
            warnings.warn('Zero-length path resampled to zero actions.')
            return [Action() for _ in range(horizon)], True
        s = np.linspace(0.0, 1.0, len(path))
        total = 1.0
    samples = np.linspace(0.0, total, horizon + 1)
    xs = np.interp(samples, s, xy[:, 0])
    ys = np.interp(samples, s, xy[:, 1])
    ths = np.interp(samples, s, headings)
    targets = [Pose(x, y, th) for x, y, th in zip(xs[1:], ys[1:], ths[1:])]

    actions = []
    pose = path[0]
    for target in targets:
        local = target.relative_to(pose)
        # the relative heading is already wrapped, ties at +-pi resolve to +pi
        action = clamp_action(local.x, local.y, local.theta, limits)
        actions.append(action)
        pose = pose.compose(action.dx, action.dy, action.dtheta)
    return actions, False


def arc_actions(radius, angle, horizon):
    """Closed-form constant-curvature chords: ``horizon`` equal steps along an arc.

    A positive radius turns left. Each chord is expressed in the pre-step frame.
    """
    step = angle / horizon
    chord = 2.0 * radius * math.sin(step / 2.0)
    return [Action(chord * math.cos(step / 2.0), chord * math.sin(step / 2.0), step, 1.0)
            for _ in range(horizon)]


def action_scales(actions):
    """Standard deviations (sigma_x, sigma_y, sigma_kappa) of an action corpus, floored."""
    moving = [a for a in actions if not a.is_stop]
    if not moving:
        return (1.0, 1.0, 1.0)
    arr = np.array([[a.dx, a.dy, a.kappa] for a in moving])
    return tuple(float(max(v, SCALE_FLOOR)) for v in arr.std(axis=0))


def embed_action(action, step_index, scales, horizon=4, mode_ratio=MODE_RATIO):
    """Embeds one action as a conditioning token.

    The vector is ``[dx/sx, dy/sy, sin dtheta, cos dtheta, kappa/sk]`` followed
    by an 8-dimensional sinusoidal code of ``step_index / horizon`` (frequencies
    2^k, k = 0..3, sine and cosine) and a turn-vs-straight mode bit, which is
    set iff ``|dtheta|`` exceeds ``mode_ratio`` times the translation in meters.

    Args:
        action (Action): the step to embed
        step_index (int): position of the step within the horizon
        scales (tuple of floats): (sigma_x, sigma_y, sigma_kappa), strictly positive
        horizon (int): H, normalizes the time code
        mode_ratio (float): rad/m threshold of the mode bit

    Returns:
        np.ndarray: vector of length ``EMBEDDING_DIM``
    """
    sx, sy, sk = scales
    if not (sx > 0 and sy > 0 and sk > 0):
        raise ValueError('Embedding scales must be strictly positive.')
    t = step_index / horizon
    freqs = 2.0 ** np.arange(TIME_CODE_DIM // 2)
    time_code = np.empty(TIME_CODE_DIM)
    time_code[0::2] = np.sin(np.pi * freqs * t)
    time_code[1::2] = np.cos(np.pi * freqs * t)
    mode = 1.0 if abs(action.dtheta) > action.translation * mode_ratio else 0.0
    features = [action.dx / sx, action.dy / sy, math.sin(action.dtheta), math.cos(action.dtheta),
                action.kappa / sk]
    return np.concatenate((features, time_code, [mode]))


def embed_actions(actions, scales, mode_ratio=MODE_RATIO):
    """Stacks :func:`embed_action` over a sequence into an H x EMBEDDING_DIM array."""
    horizon = len(actions)
    return np.stack([embed_action(a, i, scales, horizon, mode_ratio) for i, a in enumerate(actions)])
