import numpy as np
import pytest

from mmx.games import make_bilinear

PENNIES = np.array([[1.0, -1.0], [-1.0, 1.0]])
RPS = np.array([[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])
DOMINATED = np.array([[1.0, -1.0], [-1.0, 1.0], [2.0, 2.0]])


def central_diff(fun, v, h=1e-5):
    """Central-difference Jacobian of a vector (or scalar) function at v."""
    v = np.asarray(v, dtype=float)
    cols = []
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        cols.append((np.atleast_1d(fun(v + e)) - np.atleast_1d(fun(v - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def interior(rng, n):
    p = rng.dirichlet(np.ones(n))
    p = np.maximum(p, 1e-3)
    return p / p.sum()


@pytest.fixture
def pennies():
    return make_bilinear(PENNIES)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
