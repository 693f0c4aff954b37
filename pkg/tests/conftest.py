import math

import numpy as np
import pytest

from ojaflow import SpectralMatrix, StiefelPoint, orthonormalize

# The 4x4 orthogonal start with a vanishing leading entry whose columns
# converge to (-e3, e1, e2, e4); reused across modules.
Q1 = np.array(
    [
        [0.0, math.sqrt(2) / 2, -math.sqrt(3) / 3, math.sqrt(6) / 6],
        [0.0, math.sqrt(2) / 2, math.sqrt(3) / 3, -math.sqrt(6) / 6],
        [-math.sqrt(2) / 2, 0.0, math.sqrt(6) / 6, math.sqrt(3) / 3],
        [math.sqrt(2) / 2, 0.0, math.sqrt(6) / 6, math.sqrt(3) / 3],
    ]
)

Q1_LIMIT = np.array(
    [
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
)


def random_orthogonal(rng, n):
    return orthonormalize(rng.standard_normal((n, n)))


def random_symmetric(rng, n, scale=1.0):
    m = rng.standard_normal((n, n)) * scale
    return 0.5 * (m + m.T)


def random_tangent(rng, q):
    n = q.shape[0]
    s = rng.standard_normal((n, n))
    return q @ (s - s.T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def a4():
    return SpectralMatrix.from_eigenvalues([4.0, 3.0, 2.0, 1.0])


@pytest.fixture
def q1_point():
    return StiefelPoint(Q1.copy())
