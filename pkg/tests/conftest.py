import sys

import numpy as np
import pytest

from narformer.arch_graph import ArchGraph


def chain(n=3, op=0):
    return ArchGraph.build([op] * n, [(i, i + 1) for i in range(n - 1)])


def diamond():
    return ArchGraph.build([5, 0, 1, 6], [(0, 1), (0, 2), (1, 3), (2, 3)])


def random_dags(rng, count, max_nodes=6, n_ops=5, edge_prob=0.4, min_nodes=1):
    """Random DAGs whose node order is *not* necessarily topological."""
    out = []
    for _ in range(count):
        n = int(rng.integers(min_nodes, max_nodes + 1))
        order = rng.permutation(n)
        edges = set()
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < edge_prob:
                    edges.add((int(order[i]), int(order[j])))
        out.append(ArchGraph.build(rng.integers(n_ops, size=n).tolist(), sorted(edges)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.REPORT):
            terminalreporter.write_line(line)
