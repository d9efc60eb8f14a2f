"""Datasets of (architecture, target, split) triples and the synthetic benchmark."""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch_graph import (
    DEFAULT_VOCAB,
    ArchGraph,
    GraphError,
    OpVocab,
    arch_from_obj,
    canonical_hash,
    load_arch,
    topological_order,
)

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Item:
    graph: ArchGraph
    target: float
    split: str = "train"


@dataclass
class Dataset:
    items: list[Item]
    vocab: OpVocab = field(default_factory=lambda: DEFAULT_VOCAB)

    def __post_init__(self):
        for it in self.items:
            if it.split not in SPLITS:
                raise DataError(f"unknown split {it.split!r}")
            if not math.isfinite(it.target):
                raise DataError("targets must be finite")

    def split(self, name: str) -> list[Item]:
        return [it for it in self.items if it.split == name]

    def targets(self, name: str | None = None) -> np.ndarray:
        items = self.items if name is None else self.split(name)
        return np.array([it.target for it in items], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.items)


def load_dataset(path: str | Path, vocab: OpVocab | None = None) -> Dataset:
    """Read a JSON Lines dataset; ``arch`` may be inline or a path relative to the file."""
    vocab = vocab or DEFAULT_VOCAB
    path = Path(path)
    items = []
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            arch = rec["arch"]
            if isinstance(arch, str):
                graph = load_arch(path.parent / arch, vocab)
            else:
                graph = arch_from_obj(arch, vocab)
            target = float(rec["target"])
            split = rec.get("split", "train")
        except (json.JSONDecodeError, KeyError, TypeError, GraphError, OSError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        items.append(Item(graph, target, split))
    return Dataset(items, vocab)


def write_dataset(ds: Dataset, path: str | Path) -> None:
    with open(path, "w") as fh:
        for it in ds.items:
            rec = {"arch": it.graph.to_dict(ds.vocab), "target": it.target, "split": it.split}
            fh.write(json.dumps(rec) + "\n")


# ---- target normalization ---------------------------------------------------


@dataclass(frozen=True)
class TargetTransform:
    kind: str = "identity"  # "minmax", "log" or "identity"
    lo: float = 0.0
    hi: float = 1.0

    def forward(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "minmax":
            return (y - self.lo) / (self.hi - self.lo)
        if self.kind == "log":
            return np.log(y)
        return y

    def inverse(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "minmax":
            return z * (self.hi - self.lo) + self.lo
        if self.kind == "log":
            return np.exp(z)
        return z

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetTransform":
        return cls(**d)


def normalize_targets(ds: Dataset, kind: str = "minmax") -> tuple[Dataset, TargetTransform]:
    """Rescale all targets with statistics taken from the train split."""
    train = ds.targets("train")
    if train.size == 0:
        raise DataError("normalization needs a non-empty train split")
    if kind == "minmax":
        lo, hi = float(train.min()), float(train.max())
        if hi == lo:
            raise DataError("cannot normalize constant targets")
        tf = TargetTransform("minmax", lo, hi)
    elif kind == "log":
        if np.any(ds.targets() <= 0):
            raise DataError("log normalization needs positive targets")
        tf = TargetTransform("log")
    else:
        raise ValueError(f"unknown normalization {kind!r}")
    items = [Item(it.graph, float(tf.forward(it.target)), it.split) for it in ds.items]
    return Dataset(items, ds.vocab), tf


# ---- synthetic benchmark ----------------------------------------------------


def random_dag(
    rng: np.random.Generator,
    n_nodes: int,
    n_ops: int,
    edge_prob: float = 0.3,
) -> ArchGraph:
    """Connected DAG in topological order: every node after the first has at
    least one predecessor, plus extra forward edges with ``edge_prob``."""
    ops = rng.integers(n_ops, size=n_nodes)
    edges = set()
    for i in range(1, n_nodes):
        edges.add((int(rng.integers(i)), i))
        for j in range(i):
            if rng.random() < edge_prob:
                edges.add((j, i))
    return ArchGraph.build(ops.tolist(), sorted(edges))


def count_paths(g: ArchGraph, cap: int | None = None) -> int:
    """Number of source-to-sink paths."""
    n = g.n_nodes
    succ: list[list[int]] = [[] for _ in range(n)]
    indeg = [0] * n
    for a, b in g.edges:
        succ[a].append(b)
        indeg[b] += 1
    ways = [1 if indeg[v] == 0 else 0 for v in range(n)]
    for v in topological_order(n, g.edges):
        for w in succ[v]:
            ways[w] += ways[v]
    total = sum(ways[v] for v in range(n) if not succ[v])
    return total if cap is None else min(total, cap)


class SyntheticTarget:
    """Isomorphism-invariant target: op histogram, node count and path count."""

    PATH_CAP = 10

    def __init__(self, seed: int, vocab_size: int):
        rng = np.random.default_rng([seed, 7919])
        self.vocab_size = vocab_size
        self.op_weights = rng.normal(0.0, 1.0, size=vocab_size)
        self.alpha = float(rng.uniform(-0.5, 0.5))
        self.beta = float(rng.uniform(0.1, 0.3))

    def __call__(self, g: ArchGraph) -> float:
        hist = np.bincount(g.ops, minlength=self.vocab_size)[: self.vocab_size]
        return float(
            hist @ self.op_weights
            + self.alpha * g.n_nodes
            + self.beta * count_paths(g, self.PATH_CAP)
        )


def split_counts(n: int, fractions: Sequence[float]) -> list[int]:
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    return [n_train, n_val, n - n_train - n_val]


def synth_benchmark(
    seed: int,
    n_graphs: int,
    max_nodes: int = 8,
    vocab_size: int = 5,
    min_nodes: int = 3,
    split_fractions: Sequence[float] = (0.75, 0.125, 0.125),
    edge_prob: float = 0.3,
) -> Dataset:
    """Deterministic desk-scale benchmark of distinct random DAGs."""
    if n_graphs < 1:
        raise ValueError("n_graphs must be >= 1")
    if max_nodes < 2:
        raise ValueError("max_nodes must be >= 2")
    if vocab_size > len(DEFAULT_VOCAB):
        raise ValueError(f"vocab_size must be <= {len(DEFAULT_VOCAB)}")
    min_nodes = min(min_nodes, max_nodes)
    rng = np.random.default_rng(seed)
    target = SyntheticTarget(seed, vocab_size)
    graphs: list[ArchGraph] = []
    seen: set[str] = set()
    attempts = 0
    while len(graphs) < n_graphs:
        attempts += 1
        if attempts > 100 * n_graphs:
            raise ValueError("could not generate enough distinct graphs")
        g = random_dag(rng, int(rng.integers(min_nodes, max_nodes + 1)), vocab_size, edge_prob)
        h = canonical_hash(g)
        if h in seen:
            continue
        seen.add(h)
        graphs.append(g)
    counts = split_counts(n_graphs, split_fractions)
    tags = [s for s, c in zip(SPLITS, counts) for _ in range(c)]
    items = [Item(g, target(g), tag) for g, tag in zip(graphs, tags)]
    return Dataset(items, DEFAULT_VOCAB)
