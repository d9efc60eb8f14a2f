"""Relabelings of an architecture's encoding order.

``flow`` mode yields only linear extensions of the DAG (every edge still points
from a lower to a higher position).  ``isomorphic`` mode yields every
non-identity permutation, a superset used as an ablation baseline.
"""

from __future__ import annotations

import itertools
from collections.abc import Iterator

import numpy as np

from .arch_graph import ArchGraph, relabel

MODES = ("flow", "isomorphic")
DEFAULT_POOL_CAP = 5040


def _linear_extensions(g: ArchGraph) -> Iterator[list[int]]:
    """All topological orders, lexicographically, by frontier backtracking."""
    n = g.n_nodes
    succ: list[list[int]] = [[] for _ in range(n)]
    indeg = [0] * n
    for a, b in g.sorted_edges():
        succ[a].append(b)
        indeg[b] += 1
    order: list[int] = []
    placed = [False] * n

    def extend():
        if len(order) == n:
            yield list(order)
            return
        for v in range(n):
            if placed[v] or indeg[v]:
                continue
            placed[v] = True
            order.append(v)
            for w in succ[v]:
                indeg[w] -= 1
            yield from extend()
            for w in succ[v]:
                indeg[w] += 1
            order.pop()
            placed[v] = False

    yield from extend()


def _order_to_perm(order: list[int]) -> list[int]:
    perm = [0] * len(order)
    for pos, node in enumerate(order):
        perm[node] = pos
    return perm


def enumerate_flow_consistent(g: ArchGraph, cap: int) -> list[list[int]]:
    """Non-identity permutations ``p`` with ``p[a] < p[b]`` for every edge."""
    identity = list(range(g.n_nodes))
    out: list[list[int]] = []
    if cap <= 0:
        return out
    for order in _linear_extensions(g):
        perm = _order_to_perm(order)
        if perm == identity:
            continue
        out.append(perm)
        if len(out) >= cap:
            break
    return out


def enumerate_isomorphic(g: ArchGraph, cap: int) -> list[list[int]]:
    """Every non-identity permutation of the node positions."""
    n = g.n_nodes
    out: list[list[int]] = []
    if cap <= 0:
        return out
    for perm in itertools.islice(itertools.permutations(range(n)), 1, None):
        out.append(list(perm))
        if len(out) >= cap:
            break
    return out


def enumerate_permutations(g: ArchGraph, mode: str, cap: int) -> list[list[int]]:
    if mode == "flow":
        return enumerate_flow_consistent(g, cap)
    if mode in ("isomorphic", "iso"):
        return enumerate_isomorphic(g, cap)
    raise ValueError(f"unknown augmentation mode {mode!r}")


def sample_augmented(
    g: ArchGraph, k: int, mode: str, seed: int, pool_cap: int = DEFAULT_POOL_CAP
) -> list[ArchGraph]:
    if k <= 0:
        return []
    pool = enumerate_permutations(g, mode, pool_cap)
    if not pool:
        return []
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
    return [relabel(g, pool[i]) for i in picks]


class PartnerSampler:
    """Draws one random augmented partner per call, caching flow pools per graph."""

    def __init__(self, mode: str, pool_cap: int = DEFAULT_POOL_CAP):
        if mode not in ("flow", "isomorphic", "iso"):
            raise ValueError(f"unknown augmentation mode {mode!r}")
        self.mode = "isomorphic" if mode == "iso" else mode
        self.pool_cap = pool_cap
        self._pools: dict[int, list[list[int]]] = {}

    def pool_size(self, key: int, g: ArchGraph) -> int:
        return len(self._pool(key, g))

    def _pool(self, key: int, g: ArchGraph) -> list[list[int]]:
        if key not in self._pools:
            self._pools[key] = enumerate_flow_consistent(g, self.pool_cap)
        return self._pools[key]

    def sample(self, key: int, g: ArchGraph, rng: np.random.Generator) -> ArchGraph | None:
        """A relabeled copy of ``g``, or None when no non-identity relabeling exists."""
        if self.mode == "isomorphic":
            n = g.n_nodes
            if n < 2:
                return None
            identity = np.arange(n)
            while True:
                perm = rng.permutation(n)
                if not np.array_equal(perm, identity):
                    return relabel(g, perm.tolist())
        pool = self._pool(key, g)
        if not pool:
            return None
        return relabel(g, pool[rng.integers(len(pool))])
