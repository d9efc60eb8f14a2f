import itertools
import math

import pytest

from narformer.arch_graph import ArchGraph, canonical_hash, relabel
from narformer.augment import (
    PartnerSampler,
    enumerate_flow_consistent,
    enumerate_isomorphic,
    sample_augmented,
)

from conftest import chain, diamond, random_dags


def brute_force_flow(g):
    """Filter all N! permutations by the edge condition."""
    n = g.n_nodes
    return {
        p
        for p in itertools.permutations(range(n))
        if p != tuple(range(n)) and all(p[a] < p[b] for a, b in g.edges)
    }


class TestFlowConsistent:
    def test_chain_has_none(self):
        assert enumerate_flow_consistent(chain(), 100) == []

    def test_diamond_matches_brute_force(self):
        assert brute_force_flow(diamond()) == {(0, 2, 1, 3)}
        assert enumerate_flow_consistent(diamond(), 100) == [[0, 2, 1, 3]]

    def test_isolated_nodes(self):
        g = ArchGraph.build([0, 1, 2], [])
        assert len(enumerate_flow_consistent(g, 100)) == 5

    def test_random_against_oracle(self, rng):
        for g in random_dags(rng, 100, max_nodes=6):
            got = enumerate_flow_consistent(g, 10_000)
            assert len(got) == len({tuple(p) for p in got})
            assert {tuple(p) for p in got} == brute_force_flow(g)

    def test_cap(self):
        g = ArchGraph.build([0] * 5, [])
        assert len(enumerate_flow_consistent(g, 7)) == 7
        assert enumerate_flow_consistent(g, 0) == []

    def test_lexicographic_order(self):
        g = ArchGraph.build([0] * 4, [(0, 3)])
        perms = enumerate_flow_consistent(g, 100)
        orders = [sorted(range(4), key=p.__getitem__) for p in perms]
        assert orders == sorted(orders)

    def test_large_graph_tractable(self):
        # two parallel chains of 6: C(12, 6) = 924 linear extensions
        edges = [(i, i + 1) for i in range(5)] + [(i, i + 1) for i in range(6, 11)]
        g = ArchGraph.build([0] * 12, edges)
        assert len(enumerate_flow_consistent(g, 10_000)) == math.comb(12, 6) - 1


class TestIsomorphic:
    def test_count(self):
        assert len(enumerate_isomorphic(chain(3), 100)) == 5
        assert len(enumerate_isomorphic(diamond(), 100)) == math.factorial(4) - 1

    def test_superset(self):
        g = diamond()
        flow = {tuple(p) for p in enumerate_flow_consistent(g, 100)}
        iso = {tuple(p) for p in enumerate_isomorphic(g, 100)}
        assert flow < iso

    def test_reversal_only_in_iso(self):
        g = chain(4)
        rev = [3, 2, 1, 0]
        assert rev in enumerate_isomorphic(g, 100)
        assert rev not in enumerate_flow_consistent(g, 100)


class TestSampling:
    def test_zero(self):
        assert sample_augmented(diamond(), 0, "flow", 0) == []

    def test_chain_flow_empty(self):
        assert sample_augmented(chain(5), 10, "flow", 0) == []

    def test_valid_and_distinct(self, rng):
        for g in random_dags(rng, 30, max_nodes=6, min_nodes=2):
            for mode in ("flow", "isomorphic"):
                out = sample_augmented(g, 4, mode, seed=3)
                assert len(out) <= 4
                for h in out:
                    assert h.n_nodes == g.n_nodes and len(h.edges) == len(g.edges)
                    assert sorted(h.ops) == sorted(g.ops)

    def test_asymmetric_graph_hash_changes(self):
        g = ArchGraph.build([0, 1, 2, 3], [(0, 3)])
        for mode in ("flow", "isomorphic"):
            out = sample_augmented(g, 5, mode, seed=2)
            assert out and canonical_hash(g) not in {canonical_hash(h) for h in out}

    def test_flow_samples_point_forward(self):
        g = ArchGraph.build([0, 1, 2, 3, 4], [(0, 1), (0, 2), (0, 3), (1, 4), (2, 4), (3, 4)])
        for h in sample_augmented(g, 10, "flow", seed=1):
            assert all(a < b for a, b in h.edges)

    def test_fewer_than_requested(self):
        assert len(sample_augmented(diamond(), 10, "flow", 0)) == 1

    def test_reproducible(self):
        g = ArchGraph.build([0, 1, 2, 3], [(0, 3)])
        a = sample_augmented(g, 3, "isomorphic", seed=11)
        b = sample_augmented(g, 3, "isomorphic", seed=11)
        assert a == b

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            sample_augmented(diamond(), 1, "bogus", 0)


class TestPartnerSampler:
    def test_flow_partner_is_extension(self, rng):
        s = PartnerSampler("flow")
        g = diamond()
        h = s.sample(0, g, rng)
        assert h == relabel(g, [0, 2, 1, 3])
        assert s.sample(1, chain(), rng) is None

    def test_iso_partner_non_identity(self, rng):
        s = PartnerSampler("isomorphic")
        g = chain(2)
        for _ in range(10):
            assert s.sample(0, g, rng) == relabel(g, [1, 0])
        assert s.sample(0, chain(1), rng) is None
