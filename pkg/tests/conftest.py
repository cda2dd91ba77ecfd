import numpy as np
import pytest
from hypothesis import settings

from ibg.graph_io import DirectedGraphSignal

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")


def random_graph(n, density, d=0, seed=0, self_loops=True):
    rng = np.random.default_rng(seed)
    A = rng.random((n, n)) < density
    if not self_loops:
        np.fill_diagonal(A, False)
    if not A.any():
        A[0, min(1, n - 1)] = True
    if A.all():
        A[0, 0] = False
    src, dst = np.nonzero(A)
    X = rng.uniform(-1, 1, (n, d)) if d else None
    return DirectedGraphSignal(n, np.column_stack([src, dst]), X)


@pytest.fixture
def small_graph():
    return random_graph(12, 0.3, d=3, seed=1)
