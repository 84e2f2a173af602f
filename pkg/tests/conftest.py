import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gttt.graph import Graph

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_graph(n, p, d=3, C=2, seed=0, texts=False):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    feats = rng.standard_normal((n, d))
    labels = rng.integers(0, C, n)
    txt = [f"text of node {i}" for i in range(n)] if texts else None
    return Graph.from_edges(n, edges, feats, labels, C, txt)


def path_graph(n, d=1):
    edges = [(i, i + 1) for i in range(n - 1)]
    return Graph.from_edges(n, edges, np.zeros((n, d)), np.zeros(n, dtype=int), 1)


def star_graph(leaves, d=1):
    edges = [(0, i) for i in range(1, leaves + 1)]
    n = leaves + 1
    return Graph.from_edges(n, edges, np.zeros((n, d)), np.zeros(n, dtype=int), 1)


@pytest.fixture
def small_graph():
    return random_graph(30, 0.15, d=4, C=3, seed=3)
