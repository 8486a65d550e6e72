import numpy as np
import pytest
from hypothesis import strategies as st

from sargnn.graph import Graph


def random_graph(rng: np.random.Generator, n: int, p: float = 0.4, feat_dim: int = 3,
                 label: int = 0, truth: bool = True) -> Graph:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1) if n > 1 else np.zeros((0, 2), dtype=int)
    sal = None
    if truth:
        sal = rng.random(n) + 0.1
        sal /= sal.sum()
    return Graph(n, edges, rng.normal(size=(n, feat_dim)), label, sal)


@st.composite
def graphs(draw, min_nodes=1, max_nodes=8, feat_dim=3):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(min_nodes, max_nodes))
    p = draw(st.floats(0.0, 1.0))
    return random_graph(np.random.default_rng(seed), n, p, feat_dim)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def k3():
    return Graph(3, np.array([[0, 1], [1, 2], [0, 2]]), np.eye(3), 0)


@pytest.fixture
def path2():
    return Graph(2, np.array([[0, 1]]), np.ones((2, 1)), 0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
