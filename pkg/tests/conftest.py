import numpy as np
import pytest

from gammanet.autodiff import Tensor
from gammanet.dataio import GraphTopology

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand_tensor(rng, shape, scale=1.0):
    return Tensor(rng.uniform(-2.0, 2.0, shape) * scale, requires_grad=True)


def random_topology(rng, n, p=0.4):
    links = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return GraphTopology.from_links(n, links)
