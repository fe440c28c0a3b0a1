import numpy as np
import numba
from numba import void, float64, int64, boolean


EPS = 1e-9
NO_HIT = -2
WALL_HIT = -1


@numba.njit(int64[:, :](int64, int64, int64, int64), cache=True)
def bresenham_2d(x1, y1, x2, y2):
    """Returns the 8-connected cell chain from (x1, y1) to (x2, y2), both ends included.

    Symmetric under mirroring of either axis: the step decisions only depend on
    the absolute deltas, the signs only pick the step direction.
    """
    dx = abs(x2 - x1)
    dy = -abs(y2 - y1)
    if x2 > x1:
        xs = 1
    else:
        xs = -1
    if y2 > y1:
        ys = 1
    else:
        ys = -1
    size = max(dx, -dy) + 1
    path = np.zeros((size, 2), dtype=np.int64)
    error = dx + dy
    idx = 0
    while idx < size:
        path[idx, 0] = x1
        path[idx, 1] = y1
        idx += 1
        e2 = 2 * error
        if e2 >= dy:
            if x1 == x2:
                break
            error += dy
            x1 += xs
        if e2 <= dx:
            if y1 == y2:
                break
            error += dx
            y1 += ys
    return path[:idx]


@numba.njit(float64(float64, float64, float64, float64, float64, float64, float64, float64), cache=True)
def ray_segment_distance(ox, oy, dx, dy, x1, y1, x2, y2):
    """Parameter t of the first intersection of o + t*d with a segment, inf if none.

    With a unit direction t is a distance in meters; with d = end - start of a
    motion it is the travelled fraction.
    """
    ex = x2 - x1
    ey = y2 - y1
    denom = dx * ey - dy * ex
    if abs(denom) < 1e-12:
        return np.inf
    wx = x1 - ox
    wy = y1 - oy
    t = (wx * ey - wy * ex) / denom
    u = (wx * dy - wy * dx) / denom
    if u < 0.0 or u > 1.0 or t <= EPS:
        return np.inf
    return t


@numba.njit(float64(float64, float64, float64, float64, float64, float64, float64), cache=True)
def ray_disc_distance(ox, oy, dx, dy, cx, cy, radius):
    fx = ox - cx
    fy = oy - cy
    b = fx * dx + fy * dy
    c = fx * fx + fy * fy - radius * radius
    disc = b * b - c
    if disc < 0.0:
        return np.inf
    sq = np.sqrt(disc)
    t1 = -b - sq
    if t1 > EPS:
        return t1
    # origin inside the disc: report the exit point
    t2 = -b + sq
    if t2 > EPS:
        return t2
    return np.inf


@numba.njit(void(float64, float64, float64[:], float64[:, :], boolean[:], float64[:, :], float64,
                 float64[:], int64[:]), cache=True)
def cast_rays(ox, oy, angles, segments, opaque, discs, d_max, depth, hit):
    """Casts a fan of rays against wall segments and landmark discs.

    Args:
        ox, oy (float): ray origin in world coordinates (meters)
        angles (array of floats): absolute ray headings (radians)
        segments (array of floats): N x 4 wall endpoints (x1, y1, x2, y2)
        opaque (array of bools): whether a segment stops rays
        discs (array of floats): M x 3 landmark discs (x, y, radius)
        d_max (float): maximal range, returned for rays without a hit
        depth (array of floats): output ranges
        hit (array of ints): output hit codes, landmark index, WALL_HIT or NO_HIT
    """
    for r in range(angles.shape[0]):
        c = np.cos(angles[r])
        s = np.sin(angles[r])
        best = d_max
        label = NO_HIT
        for k in range(segments.shape[0]):
            if not opaque[k]:
                continue
            t = ray_segment_distance(ox, oy, c, s, segments[k, 0], segments[k, 1], segments[k, 2], segments[k, 3])
            if t < best:
                best = t
                label = WALL_HIT
        for k in range(discs.shape[0]):
            t = ray_disc_distance(ox, oy, c, s, discs[k, 0], discs[k, 1], discs[k, 2])
            if t < best:
                best = t
                label = k
        depth[r] = best
        hit[r] = label


@numba.njit(float64(float64, float64, float64, float64, float64[:, :]), cache=True)
def first_contact(x0, y0, x1, y1, segments):
    """Fraction of the motion x0 -> x1 travelled before touching a wall, inf if free."""
    best = np.inf
    dx = x1 - x0
    dy = y1 - y0
    for k in range(segments.shape[0]):
        t = ray_segment_distance(x0, y0, dx, dy, segments[k, 0], segments[k, 1], segments[k, 2], segments[k, 3])
        if t <= 1.0 and t < best:
            best = t
    return best


@numba.njit(void(float64[:, :], int64, int64, int64[:, :], boolean[:], float64, float64, float64), cache=True)
def integrate_rays(log_odds, i0, j0, ends, hits, l_free, l_occ, l_max):
    """Applies one observation to a log-odds grid.

    Every cell is updated at most once per observation and occupied evidence
    takes precedence over free evidence from neighbouring rays.

    Args:
        log_odds (2D array of floats): the grid, updated in place
        i0, j0 (int): cell of the sensor origin
        ends (2D array of ints): R x 2 cells of the ray end points
        hits (array of bools): whether the end cell of a ray is an obstacle
        l_free (float): (negative) log-odds increment for traversed cells
        l_occ (float): (positive) log-odds increment for end cells of hits
        l_max (float): clamp bound
    """
    size_x = log_odds.shape[0]
    size_y = log_odds.shape[1]
    marks = np.zeros((size_x, size_y), dtype=np.int8)
    for r in range(ends.shape[0]):
        path = bresenham_2d(i0, j0, ends[r, 0], ends[r, 1])
        n = path.shape[0]
        for k in range(n - 1):
            i = path[k, 0]
            j = path[k, 1]
            if 0 <= i < size_x and 0 <= j < size_y and marks[i, j] == 0:
                marks[i, j] = 1
        i = path[n - 1, 0]
        j = path[n - 1, 1]
        if hits[r] and 0 <= i < size_x and 0 <= j < size_y:
            marks[i, j] = 2
    for i in range(size_x):
        for j in range(size_y):
            if marks[i, j] == 1:
                log_odds[i, j] = max(log_odds[i, j] + l_free, -l_max)
            elif marks[i, j] == 2:
                log_odds[i, j] = min(log_odds[i, j] + l_occ, l_max)


@numba.njit(void(float64[:, :], float64[:], float64[:], float64[:], float64, boolean[:, :], boolean), cache=True)
def splat_bilinear(values, us, vs, conf, half, mask, additive):
    """Deposits confidences at fractional grid indices with bilinear weights.

    Points whose index lies outside [0, side - 1] or whose nearest cell is
    masked out are dropped. The four weights of a kept point sum to one.

    Args:
        values (2D array of floats): the grid, updated in place
        us, vs (arrays of floats): ego coordinates divided by the cell size
        conf (array of floats): confidence carried by each point
        half (float): index of the agent cell
        mask (2D array of bools): cells that may receive evidence
        additive (bool): accumulate by summation instead of running maximum
    """
    side = values.shape[0]
    for p in range(us.shape[0]):
        u = us[p] + half
        v = vs[p] + half
        if u < 0.0 or v < 0.0 or u > side - 1 or v > side - 1:
            continue
        if not mask[int(np.floor(u + 0.5)), int(np.floor(v + 0.5))]:
            continue
        i = min(int(np.floor(u)), side - 2)
        j = min(int(np.floor(v)), side - 2)
        fu = u - i
        fv = v - j
        c = conf[p]
        w00 = (1.0 - fu) * (1.0 - fv) * c
        w10 = fu * (1.0 - fv) * c
        w01 = (1.0 - fu) * fv * c
        w11 = fu * fv * c
        if additive:
            values[i, j] += w00
            values[i + 1, j] += w10
            values[i, j + 1] += w01
            values[i + 1, j + 1] += w11
        else:
            values[i, j] = max(values[i, j], w00)
            values[i + 1, j] = max(values[i + 1, j], w10)
            values[i, j + 1] = max(values[i, j + 1], w01)
            values[i + 1, j + 1] = max(values[i + 1, j + 1], w11)


@numba.njit(float64(float64[:, :], float64, float64, float64), cache=True)
def bilinear_sample(values, u, v, half):
    side = values.shape[0]
    u = u + half
    v = v + half
    if u < 0.0 or v < 0.0 or u > side - 1 or v > side - 1:
        return 0.0
    i = min(int(np.floor(u)), side - 2)
    j = min(int(np.floor(v)), side - 2)
    fu = u - i
    fv = v - j
    return ((1.0 - fu) * (1.0 - fv) * values[i, j] + fu * (1.0 - fv) * values[i + 1, j]
            + (1.0 - fu) * fv * values[i, j + 1] + fu * fv * values[i + 1, j + 1])
