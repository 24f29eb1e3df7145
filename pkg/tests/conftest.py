import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from xgkn.graphs import Graph, Rng


def path_graph(n: int, features=None) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)], features=features)


def cycle_graph(n: int, features=None) -> Graph:
    edges = [(i, (i + 1) % n) for i in range(n)]
    return Graph.from_edges(n, edges, features=features)


def star_graph(branches: int) -> Graph:
    return Graph.from_edges(branches + 1, [(0, i) for i in range(1, branches + 1)])


def house_graph() -> Graph:
    # 4-cycle 0-1-2-3 plus roof node 4 joined to 0 and 1
    return Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 0), (4, 0), (4, 1)])


def random_graph(n: int, p: float, rng: Rng, d: int = 1, binary_features: bool = False) -> Graph:
    adj = np.zeros((n, n))
    draws = rng.random((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if draws[i, j] < p:
                adj[i, j] = adj[j, i] = 1.0
    if binary_features:
        feats = (rng.random((n, d)) < 0.5).astype(float)
    else:
        feats = rng.normal(size=(n, d))
    return Graph(adj, feats, np.arange(n))


@pytest.fixture
def rng():
    return Rng(12345)
