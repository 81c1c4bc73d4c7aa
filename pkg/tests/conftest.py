import numpy as np
import pytest

from stpgsr.graphs import devectorize


def make_connectome(edges, n, default_weight=1.0):
    """Symmetric zero-diagonal matrix from (i, j[, w]) tuples."""
    a = np.zeros((n, n))
    for e in edges:
        i, j = e[0], e[1]
        w = e[2] if len(e) > 2 else default_weight
        a[i, j] = a[j, i] = w
    return a


def random_connectome(rng, n, low=0.05, high=1.0, density=1.0):
    m = n * (n - 1) // 2
    v = rng.uniform(low, high, m)
    if density < 1.0:
        v = v * (rng.random(m) < density)
    return devectorize(v, n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
