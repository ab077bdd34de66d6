import numpy as np
import pytest

from ampkin import make_toy_template
from ampkin.rotations import axis_angle_to_matrix


@pytest.fixture(scope="session")
def toy():
    return make_toy_template(512, seed=0)


@pytest.fixture(scope="session")
def small_toy():
    return make_toy_template(96, seed=3)


def random_rotations(rng, n):
    """Uniformly scattered valid rotation matrices."""
    aa = rng.normal(size=(n, 3))
    aa *= rng.uniform(0.0, np.pi, size=(n, 1)) / np.linalg.norm(aa, axis=1, keepdims=True)
    return axis_angle_to_matrix(aa)


def random_pose(rng, max_angle=0.8):
    aa = rng.normal(size=(24, 3))
    aa *= rng.uniform(0.0, max_angle, size=(24, 1)) / np.linalg.norm(aa, axis=1, keepdims=True)
    return axis_angle_to_matrix(aa)
