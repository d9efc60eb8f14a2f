import json

import numpy as np
import pytest

from narformer.arch_graph import ArchGraph, canonical_hash, topological_order
from narformer.data import synth_benchmark, write_dataset
from narformer.model import ModelConfig
from narformer.search import (
    MutationError,
    OracleError,
    RandomDAGSpace,
    SearchConfig,
    SearchError,
    SyntheticOracle,
    TableOracle,
    TableSpace,
    apply_random_edit,
    mutate,
    parse_oracle,
    run_search,
    write_log,
)
from narformer.tokenizer import EncoderSpec

from conftest import chain, diamond

SPEC = EncoderSpec(L_op=4, L_self=4, L_sour=4)
CFG = ModelConfig(D=24, n_stage1_blocks=1, n_heads=2, fusion_stages=(2, 1), head_hidden_sizes=(16,))
FAST = SearchConfig(n_candidates=30, first_epochs=2, warm_epochs=1, batch_size=16, lr=1e-3)


def search(space, oracle, budget=30, init_size=10, topk=10, seed=0):
    return run_search(space, oracle, budget, init_size, topk, seed, CFG, SPEC, FAST)


class TestMutation:
    def test_fuzz_valid_and_different(self, rng):
        space = RandomDAGSpace()
        g = space.sample(rng)
        for _ in range(1000):
            child = apply_random_edit(g, 5, rng)
            topological_order(child.n_nodes, child.edges)  # acyclic
            assert canonical_hash(child) != canonical_hash(g)
            assert child.n_nodes == g.n_nodes
            g = child

    def test_single_edit(self, rng):
        g = diamond()
        for _ in range(100):
            h = apply_random_edit(g, 7, rng)
            op_changes = sum(a != b for a, b in zip(g.ops, h.ops))
            if op_changes:
                assert op_changes == 1 and h.edges == g.edges
            else:
                assert len(h.edges ^ g.edges) <= 2

    def test_no_legal_edit(self):
        g = ArchGraph.build([0], [])
        with pytest.raises(MutationError):
            mutate(g, RandomDAGSpace(n_ops=1), seed=0)

    def test_reproducible(self):
        g = chain(5)
        space = RandomDAGSpace()
        assert mutate(g, space, 9) == mutate(g, space, 9)

    def test_table_space_stays_in_table(self, rng):
        ds = synth_benchmark(seed=1, n_graphs=60)
        space = TableSpace([it.graph for it in ds.items])
        table = {canonical_hash(it.graph) for it in ds.items}
        for it in ds.items[:20]:
            child = space.mutate(it.graph, rng)
            assert canonical_hash(child) in table
            assert child != it.graph

    def test_table_distance_zero_on_self(self):
        ds = synth_benchmark(seed=1, n_graphs=10)
        space = TableSpace([it.graph for it in ds.items])
        d = space.distances(ds.items[3].graph)
        assert d[3] == 0 and np.all(np.delete(d, 3) > 0)


class TestOracles:
    def test_parse_synthetic(self):
        o = parse_oracle("synthetic:4")
        assert isinstance(o, SyntheticOracle)
        assert o(chain(4)) == SyntheticOracle(4)(chain(4))

    def test_parse_table(self, tmp_path):
        ds = synth_benchmark(seed=2, n_graphs=10)
        write_dataset(ds, tmp_path / "t.jsonl")
        o = parse_oracle(f"table:{tmp_path / 't.jsonl'}")
        assert o(ds.items[0].graph) == ds.items[0].target
        with pytest.raises(OracleError):
            o(chain(12))

    def test_parse_bad(self):
        with pytest.raises(ValueError):
            parse_oracle("magic:1")

    def test_synthetic_vocab(self):
        with pytest.raises(OracleError):
            SyntheticOracle(0)(chain(3, op=7))


@pytest.fixture(scope="module")
def result():
    return search(RandomDAGSpace(), SyntheticOracle(0), budget=30, seed=1)


class TestSearch:
    def test_budget_respected(self, result):
        assert len(result.log) == 30
        assert [e["queries"] for e in result.log] == list(range(1, 31))

    def test_no_repeats(self, result):
        digests = [e["digest"] for e in result.log]
        assert len(set(digests)) == len(digests)

    def test_rounds(self, result):
        assert [e["round"] for e in result.log] == [0] * 10 + [1] * 10 + [2] * 10
        assert all(e["predicted"] is None for e in result.log[:10])
        assert all(isinstance(e["predicted"], float) for e in result.log[10:])

    def test_best_is_max(self, result):
        assert result.best_value == max(e["oracle"] for e in result.log)
        assert SyntheticOracle(0)(result.best) == result.best_value
        running = np.maximum.accumulate([e["oracle"] for e in result.log])
        assert np.all(np.diff(running) >= 0)

    def test_init_only(self):
        res = search(RandomDAGSpace(), SyntheticOracle(0), budget=10)
        assert len(res.log) == 10 and {e["round"] for e in res.log} == {0}

    def test_partial_last_round(self):
        res = search(RandomDAGSpace(), SyntheticOracle(0), budget=15, topk=10)
        assert len(res.log) == 15

    def test_reproducible(self):
        a = search(RandomDAGSpace(), SyntheticOracle(0), budget=20, seed=3)
        b = search(RandomDAGSpace(), SyntheticOracle(0), budget=20, seed=3)
        assert a.log == b.log

    def test_table_search(self):
        ds = synth_benchmark(seed=0, n_graphs=80)
        oracle = TableOracle(ds)
        res = search(TableSpace(oracle.graphs), oracle, budget=30)
        assert res.best_value in set(oracle.values())

    def test_exhausted_space(self):
        ds = synth_benchmark(seed=0, n_graphs=12)
        oracle = TableOracle(ds)
        with pytest.raises(SearchError):
            search(TableSpace(oracle.graphs), oracle, budget=30)

    @pytest.mark.parametrize("kw", [{"budget": 5, "init_size": 10}, {"topk": 0}])
    def test_bad_args(self, kw):
        with pytest.raises(ValueError):
            search(RandomDAGSpace(), SyntheticOracle(0), **kw)

    def test_write_log(self, result, tmp_path):
        write_log(result.log, tmp_path / "log.jsonl")
        lines = (tmp_path / "log.jsonl").read_text().splitlines()
        assert [json.loads(x) for x in lines] == result.log
