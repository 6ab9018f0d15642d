import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lifenet.model import CommoditySpec, NetworkGraph, routing_network

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def line_network(n_nodes=2, capacity=5.0, cost=1.0, rate=4.0, gamma=1.0, L=1, arrive_lifetime=None):
    """0 -> 1 -> ... -> n-1, one commodity from node 0 to the last node."""
    edges = tuple((i, i + 1) for i in range(n_nodes - 1))
    g = NetworkGraph(n_nodes, edges, np.full(len(edges), float(capacity)), np.full(len(edges), float(cost)))
    lt = L if arrive_lifetime is None else arrive_lifetime
    spec = CommoditySpec(n_nodes - 1, gamma, L, {(0, lt): rate} if rate else {})
    return routing_network(g, [spec])


@pytest.fixture
def two_node():
    return line_network(2, capacity=5.0, cost=1.0, rate=4.0, gamma=1.0, L=1)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
