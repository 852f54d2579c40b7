import numpy as np
import pytest

from partsim.dataset import generate_ba
from partsim.graphs import Graph


def ba(n: int, seed: int, gid: str = "") -> Graph:
    """BA tree (attachment 1) with a usable id for the model caches."""
    g = generate_ba(n, 1, seed)
    return Graph(g.n, g.edges, id=gid or f"ba{n}s{seed}")


def barbell() -> Graph:
    """Two 5-cliques joined by a single bridge edge."""
    edges = [(i, j) for i in range(5) for j in range(i + 1, 5)]
    edges += [(i + 5, j + 5) for i in range(5) for j in range(i + 1, 5)]
    edges.append((4, 5))
    return Graph(10, edges, id="barbell")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
