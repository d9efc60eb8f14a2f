"""Predictor-guided evolutionary search under a fixed oracle-query budget."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch_graph import ArchGraph, OpVocab, canonical_hash, topological_order
from .data import Dataset, Item, SyntheticTarget, load_dataset, random_dag
from .model import ModelConfig
from .tokenizer import EncoderSpec
from .trainer import TrainConfig, fit

log = logging.getLogger(__name__)


class SearchError(RuntimeError):
    pass


class MutationError(SearchError):
    pass


class OracleError(SearchError):
    pass


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---- spaces -----------------------------------------------------------------


def _acyclic(n: int, edges) -> bool:
    try:
        topological_order(n, edges)
    except ValueError:
        return False
    return True


def _random_rewire(g: ArchGraph, rng: np.random.Generator, tries: int = 64):
    edges = g.sorted_edges()
    present = set(edges)
    n = g.n_nodes
    for _ in range(tries):
        old = edges[rng.integers(len(edges))]
        a, b = (int(x) for x in rng.choice(n, size=2, replace=False))
        if (a, b) in present:
            continue
        new_edges = (present - {old}) | {(a, b)}
        if _acyclic(n, new_edges):
            return new_edges
    # sampling kept failing; settle existence exhaustively
    options = []
    for old in edges:
        rest = present - {old}
        for a in range(n):
            for b in range(n):
                if a != b and (a, b) not in present and _acyclic(n, rest | {(a, b)}):
                    options.append(rest | {(a, b)})
    if not options:
        return None
    return options[rng.integers(len(options))]


def apply_random_edit(g: ArchGraph, n_ops: int, rng: np.random.Generator) -> ArchGraph:
    """Change one node's op or move one edge, keeping the graph acyclic."""
    kinds = []
    if n_ops >= 2:
        kinds.append("op")
    if g.edges and g.n_nodes >= 2:
        kinds.append("rewire")
    rng.shuffle(kinds)
    for kind in kinds:
        if kind == "op":
            i = int(rng.integers(g.n_nodes))
            choices = [op for op in range(n_ops) if op != g.nodes[i].op_index]
            ops = g.ops
            ops[i] = choices[rng.integers(len(choices))]
            return ArchGraph.build(ops, g.edges, g.name)
        new_edges = _random_rewire(g, rng)
        if new_edges is not None:
            return ArchGraph.build(g.ops, sorted(new_edges), g.name)
    raise MutationError("no valid single-edit mutation exists for this graph")


@dataclass
class RandomDAGSpace:
    """Unbounded space of random connected DAGs."""

    min_nodes: int = 3
    max_nodes: int = 8
    n_ops: int = 5
    edge_prob: float = 0.3

    def sample(self, rng: np.random.Generator) -> ArchGraph:
        n = int(rng.integers(self.min_nodes, self.max_nodes + 1))
        return random_dag(rng, n, self.n_ops, self.edge_prob)

    def mutate(self, g: ArchGraph, rng: np.random.Generator) -> ArchGraph:
        if not self.min_nodes <= g.n_nodes <= self.max_nodes:
            raise MutationError("graph lies outside the space bounds")
        return apply_random_edit(g, self.n_ops, rng)


class TableSpace:
    """A finite space: the graphs of a lookup table.

    Mutation applies a random single edit and then snaps the result to the
    nearest table graph other than the parent (node/op mismatches plus edge
    symmetric difference), breaking ties at random.
    """

    def __init__(self, graphs: list[ArchGraph], n_ops: int | None = None):
        if not graphs:
            raise ValueError("table space needs at least one graph")
        self.graphs = list(graphs)
        self.n_ops = n_ops or (max(max(g.ops) for g in graphs) + 1)
        self.hashes = [canonical_hash(g) for g in self.graphs]
        self._index = {h: i for i, h in enumerate(self.hashes)}
        width = max(g.n_nodes for g in self.graphs)
        self.width = width
        self.ops = np.full((len(graphs), width), -1, dtype=np.int64)
        self.adj = np.zeros((len(graphs), width, width), dtype=bool)
        for t, g in enumerate(self.graphs):
            self.ops[t, : g.n_nodes] = g.ops
            for a, b in g.edges:
                self.adj[t, a, b] = True

    def __len__(self) -> int:
        return len(self.graphs)

    def sample(self, rng: np.random.Generator) -> ArchGraph:
        return self.graphs[rng.integers(len(self.graphs))]

    def distances(self, g: ArchGraph) -> np.ndarray:
        ops = np.full(self.width, -1, dtype=np.int64)
        adj = np.zeros((self.width, self.width), dtype=bool)
        n = min(g.n_nodes, self.width)
        ops[:n] = g.ops[:n]
        for a, b in g.edges:
            if a < self.width and b < self.width:
                adj[a, b] = True
        extra = max(0, g.n_nodes - self.width)
        return (self.ops != ops).sum(axis=1) + (self.adj ^ adj).sum(axis=(1, 2)) + extra

    def mutate(self, g: ArchGraph, rng: np.random.Generator) -> ArchGraph:
        if len(self.graphs) < 2:
            raise MutationError("table has no other graph to move to")
        edited = apply_random_edit(g, self.n_ops, rng)
        d = self.distances(edited).astype(np.float64)
        own = self._index.get(canonical_hash(g))
        if own is not None:
            d[own] = np.inf
        best = np.flatnonzero(d == d.min())
        return self.graphs[best[rng.integers(len(best))]]


def mutate(g: ArchGraph, space, seed) -> ArchGraph:
    """One seeded mutation of ``g`` within ``space``."""
    child = space.mutate(g, _as_rng(seed))
    if canonical_hash(child) == canonical_hash(g):
        raise MutationError("mutation produced an identical graph")
    return child


# ---- oracles ----------------------------------------------------------------


class SyntheticOracle:
    def __init__(self, seed: int, vocab_size: int = 5):
        self.target = SyntheticTarget(seed, vocab_size)
        self.vocab_size = vocab_size

    def __call__(self, g: ArchGraph) -> float:
        if max(g.ops) >= self.vocab_size:
            raise OracleError("graph uses ops outside the synthetic oracle's vocabulary")
        return self.target(g)


class TableOracle:
    def __init__(self, dataset: Dataset):
        self.graphs = [it.graph for it in dataset.items]
        self.table = {canonical_hash(it.graph): it.target for it in dataset.items}

    def __call__(self, g: ArchGraph) -> float:
        try:
            return self.table[canonical_hash(g)]
        except KeyError:
            raise OracleError("architecture not present in the lookup table") from None

    def values(self) -> np.ndarray:
        return np.array(list(self.table.values()))


def parse_oracle(spec: str, vocab: OpVocab | None = None):
    kind, _, arg = spec.partition(":")
    if kind == "synthetic":
        return SyntheticOracle(int(arg or 0))
    if kind == "table":
        return TableOracle(load_dataset(arg, vocab))
    raise ValueError(f"unknown oracle spec {spec!r} (expected synthetic:<seed> or table:<path>)")


# ---- search loop -------------------------------------------------------------


@dataclass
class SearchConfig:
    budget: int = 100
    init_size: int = 10
    topk: int = 10
    n_candidates: int = 100
    seed: int = 0
    first_epochs: int = 40
    warm_epochs: int = 15
    batch_size: int = 16
    lr: float = 1e-4
    lambda1: float = 0.1


@dataclass
class SearchResult:
    best: ArchGraph
    best_value: float
    log: list[dict] = field(default_factory=list)
    pool: list[tuple[ArchGraph, float]] = field(default_factory=list)


def run_search(
    space,
    oracle,
    budget: int = 100,
    init_size: int = 10,
    topk: int = 10,
    seed: int = 0,
    model_cfg: ModelConfig | None = None,
    spec: EncoderSpec | None = None,
    cfg: SearchConfig | None = None,
) -> SearchResult:
    if budget < init_size:
        raise ValueError("budget must be at least init_size")
    if topk < 1 or init_size < 1:
        raise ValueError("topk and init_size must be >= 1")
    cfg = cfg or SearchConfig()
    spec = spec or EncoderSpec()
    model_cfg = model_cfg or ModelConfig(D=spec.D)
    rng = np.random.default_rng(seed)

    seen: set[str] = set()
    pool: list[tuple[ArchGraph, float]] = []
    audit: list[dict] = []

    def query(g: ArchGraph, rnd: int, predicted):
        if len(audit) >= budget:
            raise AssertionError("oracle budget exceeded")
        value = float(oracle(g))
        pool.append((g, value))
        audit.append(
            {
                "round": rnd,
                "digest": canonical_hash(g),
                "predicted": predicted,
                "oracle": value,
                "queries": len(audit) + 1,
            }
        )

    attempts = 0
    init: list[ArchGraph] = []
    while len(init) < init_size:
        attempts += 1
        if attempts > 1000 * init_size:
            raise SearchError("space exhausted while sampling the initial pool")
        g = space.sample(rng)
        h = canonical_hash(g)
        if h not in seen:
            seen.add(h)
            init.append(g)
    for g in init:
        query(g, 0, None)

    params = None
    rnd = 0
    while len(audit) < budget:
        rnd += 1
        train = Dataset([Item(g, v, "train") for g, v in pool])
        tcfg = TrainConfig(
            epochs=cfg.first_epochs if params is None else cfg.warm_epochs,
            batch_size=cfg.batch_size,
            lr=cfg.lr,
            seed=seed * 1000 + rnd,
            lambda1=cfg.lambda1,
            init_seed=seed,
        )
        predictor = fit(train, model_cfg, spec, tcfg, params=params).predictor
        params = predictor.params

        candidates = _candidates(space, pool, seen, cfg.n_candidates, rng)
        if not candidates:
            raise SearchError("space exhausted before the budget was spent")
        pred = predictor.predict_raw(candidates)
        order = np.argsort(-pred, kind="stable")
        n_take = min(topk, budget - len(audit))
        for j in order[:n_take]:
            seen.add(canonical_hash(candidates[j]))
            query(candidates[j], rnd, float(pred[j]))
        best_v = max(v for _, v in pool)
        log.info("round %d: %d queries, best %.4f", rnd, len(audit), best_v)

    best_g, best_v = max(pool, key=lambda gv: gv[1])
    return SearchResult(best_g, best_v, audit, pool)


def _candidates(space, pool, seen, n_candidates, rng) -> list[ArchGraph]:
    """Unseen, distinct mutations of the better half of the pool."""
    ranked = sorted(range(len(pool)), key=lambda i: -pool[i][1])
    parents = [pool[i][0] for i in ranked[: max(1, len(pool) // 2)]]
    out: list[ArchGraph] = []
    fresh: set[str] = set()
    for _ in range(20 * n_candidates):
        if len(out) >= n_candidates:
            break
        parent = parents[rng.integers(len(parents))]
        try:
            child = space.mutate(parent, rng)
        except MutationError:
            continue
        h = canonical_hash(child)
        if h in seen or h in fresh:
            continue
        fresh.add(h)
        out.append(child)
    if not out:
        # local neighbourhoods are used up; fall back to unseen random samples
        for _ in range(1000):
            g = space.sample(rng)
            h = canonical_hash(g)
            if h not in seen and h not in fresh:
                fresh.add(h)
                out.append(g)
                if len(out) >= n_candidates:
                    break
    return out


def build_space(cfg: dict, vocab: OpVocab | None = None, oracle=None):
    kind = cfg.get("type", "random")
    if kind == "random":
        return RandomDAGSpace(
            cfg.get("min_nodes", 3), cfg.get("max_nodes", 8), cfg.get("n_ops", 5), cfg.get("edge_prob", 0.3)
        )
    if kind == "table":
        if "data" in cfg:
            graphs = [it.graph for it in load_dataset(cfg["data"], vocab).items]
        elif isinstance(oracle, TableOracle):
            graphs = oracle.graphs
        else:
            raise ValueError("table space needs a 'data' path or a table oracle")
        return TableSpace(graphs)
    raise ValueError(f"unknown space type {kind!r}")


def write_log(entries: list[dict], path: str | Path) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e) + "\n")
