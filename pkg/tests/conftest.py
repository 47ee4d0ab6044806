import numpy as np
import pytest

from poolbias.graph import Graph, Pattern
from poolbias.synth import SynthSpec, synth_grid_partition


@pytest.fixture(scope="session")
def small_ds():
    """6x6 grids, 24 graphs per partition."""
    return synth_grid_partition(SynthSpec(rows=6, cols=6, per_partition_count=24, seed=11))


@pytest.fixture(scope="session")
def grid_ds():
    """The default 12x12 dataset."""
    return synth_grid_partition(SynthSpec())


@pytest.fixture
def path4():
    # 0-1-2-3 with colors 0,1,2,1
    return Graph.from_edges(4, [0, 1, 2, 1], [(0, 1), (1, 2), (2, 3)], label=1, anchor=(1,))


@pytest.fixture
def chain3():
    return Pattern.chain((4, 5, 6))


def random_graph(rng, n, k, p=0.35, label=None):
    upper = np.triu(rng.random((n, n)) < p, 1)
    edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(upper))]
    return Graph.from_edges(n, rng.integers(0, k, size=n), edges, label=label)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
