import math
import os

import numpy as np
import pytest

from imaginav.core.geometry import Pose
from imaginav.core.scene import Episode, Landmark, Scene, SensorConfig


def pytest_configure(config):
    config.addinivalue_line('markers', 'acceptance: statistical suite experiments, run with IMAGINAV_ACCEPTANCE=1')


def pytest_collection_modifyitems(config, items):
    if os.environ.get('IMAGINAV_ACCEPTANCE') == '1':
        return
    skip = pytest.mark.skip(reason='set IMAGINAV_ACCEPTANCE=1 to run the acceptance experiments')
    for item in items:
        if 'acceptance' in item.keywords:
            item.add_marker(skip)


def box_segments(width, height):
    return [(0.0, 0.0, width, 0.0), (width, 0.0, width, height), (width, height, 0.0, height),
            (0.0, height, 0.0, 0.0)]


@pytest.fixture
def empty_scene():
    return Scene((20.0, 20.0), np.zeros((0, 4)))


@pytest.fixture
def box_scene():
    """A single 10 x 10 m room with a tv and a sofa."""
    landmarks = [Landmark('tv', 8.0, 5.0, 0.3), Landmark('sofa', 2.0, 8.0, 0.3)]
    return Scene((10.0, 10.0), box_segments(10.0, 10.0), landmarks, rooms=[(0.0, 0.0, 10.0, 10.0)])


@pytest.fixture
def two_room_scene():
    """Two 5 x 5 rooms side by side joined by a 1 m door centred at y = 2.5; the bed is in the right room."""
    segments = box_segments(10.0, 5.0) + [(5.0, 0.0, 5.0, 2.0), (5.0, 3.0, 5.0, 5.0)]
    landmarks = [Landmark('bed', 8.0, 4.0, 0.3), Landmark('lamp', 2.0, 4.0, 0.3)]
    return Scene((10.0, 5.0), segments, landmarks, rooms=[(0.0, 0.0, 5.0, 5.0), (5.0, 0.0, 10.0, 5.0)],
                 doorways=[(0, 1, 5.0, 2.5)])


@pytest.fixture
def sealed_scene():
    """Two rooms separated by a solid wall."""
    segments = box_segments(10.0, 5.0) + [(5.0, 0.0, 5.0, 5.0)]
    landmarks = [Landmark('bed', 8.0, 2.5, 0.3)]
    return Scene((10.0, 5.0), segments, landmarks, rooms=[(0.0, 0.0, 5.0, 5.0), (5.0, 0.0, 10.0, 5.0)])


@pytest.fixture
def near_goal_episode(box_scene):
    """The agent starts 1 m in front of the tv surface, facing it."""
    return Episode(box_scene, Pose(6.7, 5.0, 0.0), ['tv'], (8.0, 5.0), 'tv', max_steps=20, episode_id='near')


@pytest.fixture
def small_sensor():
    return SensorConfig(n_rays=32, fov=math.pi / 2, d_max=12.0)
