"""imaginav module for dumping trajectory logs and sweeps as images.

Grayscale maps are written as binary PGM files, false-colour overlays, the
trajectory plot and the theta sweep as PNG files through matplotlib.
"""

import json
import logging
import os

import numpy as np


logger = logging.getLogger(__name__)


def to_gray(values):
    """Scales a [0, 1] field to uint8, rows along y with y pointing up."""
    values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.flipud(np.round(values * 255.0).astype(np.uint8).T)


def write_pgm(path, image):
    """Writes a 2D uint8 array as a binary (P5) PGM file."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ValueError('PGM images are two-dimensional.')
    with open(path, 'wb') as f:
        f.write(f'P5\n{image.shape[1]} {image.shape[0]}\n255\n'.encode('ascii'))
        f.write(image.tobytes())


def read_pgm(path):
    with open(path, 'rb') as f:
        magic = f.readline().strip()
        if magic != b'P5':
            raise ValueError(f'{path} is not a binary PGM file.')
        width, height = (int(v) for v in f.readline().split())
        int(f.readline())
        return np.frombuffer(f.read(), dtype=np.uint8).reshape(height, width)


def read_log(path):
    with open(path, encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


def write_png(path, values, title='', cmap='viridis'):
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 4))
    image = ax.imshow(np.asarray(values).T, origin='lower', cmap=cmap)
    fig.colorbar(image, ax=ax, fraction=0.046)
    ax.set_title(title)
    ax.set_xlabel('forward cell')
    ax.set_ylabel('left cell')
    fig.savefig(path, dpi=120, bbox_inches='tight')
    plt.close(fig)


def plot_trajectory(path, records):
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    poses = np.array([r['pose'] for r in records if 'pose' in r])
    odom = np.array([r['odom'] for r in records if 'odom' in r])
    fig, ax = plt.subplots(figsize=(5, 5))
    if len(poses):
        ax.plot(poses[:, 0], poses[:, 1], '-o', markersize=2, label='true pose')
        ax.plot(odom[:, 0], odom[:, 1], '--', label='odometry')
        hits = [r['pose'] for r in records if r.get('collision')]
        if hits:
            hits = np.array(hits)
            ax.plot(hits[:, 0], hits[:, 1], 'rx', label='collision')
    ax.set_aspect('equal')
    ax.legend()
    fig.savefig(path, dpi=120, bbox_inches='tight')
    plt.close(fig)


def render_log(log_path, out_dir):
    """Renders a JSONL trajectory log.

    Every recorded map becomes ``step<k>_<name>.pgm`` plus a PNG overlay, the
    occupancy grid stays a PGM and the trajectory is plotted to ``trajectory.png``.

    Returns:
        list of str: the written files
    """
    records = read_log(log_path)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for record in records:
        for name, values in record.get('maps', {}).items():
            stem = os.path.join(out_dir, f'step{record["step"]:04d}_{name}')
            if name == 'occupancy':
                write_pgm(stem + '.pgm', np.asarray(values, dtype=np.uint8))
                written.append(stem + '.pgm')
                continue
            values = np.asarray(values)
            peak = values.max()
            write_pgm(stem + '.pgm', to_gray(values / peak if peak > 0 else values))
            write_png(stem + '.png', values, f'{name}, step {record["step"]}')
            written += [stem + '.pgm', stem + '.png']
    plot_trajectory(os.path.join(out_dir, 'trajectory.png'), records)
    written.append(os.path.join(out_dir, 'trajectory.png'))
    logger.info('Rendered %d files from %s.', len(written), log_path)
    return written


def plot_theta_sweep(path, rows):
    """SR and SPL against theta, with the fallback rate on the right axis."""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    thetas = [r['theta'] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(thetas, [r['SR'] for r in rows], '-o', label='SR')
    ax.plot(thetas, [r['SPL'] for r in rows], '-s', label='SPL')
    ax.set_xlabel('gate threshold theta')
    ax.set_ylabel('rate')
    ax.legend(loc='upper left')
    right = ax.twinx()
    right.plot(thetas, [r['fallback_rate'] for r in rows], ':', color='gray', label='fallback rate')
    right.set_ylabel('fallback rate')
    right.set_ylim(0.0, 1.0)
    fig.savefig(path, dpi=120, bbox_inches='tight')
    plt.close(fig)
