import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from virgo.graph import build_graph, generate_synthetic, normalize_adjacency  # noqa: E402

P3_EDGES = [(0, 1), (1, 2)]


@pytest.fixture
def p3():
    return build_graph(P3_EDGES, 3)


@pytest.fixture
def p3_adj(p3):
    return normalize_adjacency(p3)


@pytest.fixture
def ring6():
    return generate_synthetic("ring", 6)


@pytest.fixture
def ring6_adj(ring6):
    return normalize_adjacency(ring6)


@pytest.fixture
def isolated_adj():
    return normalize_adjacency(build_graph([], 1))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
