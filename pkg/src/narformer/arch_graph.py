"""Architecture graphs: parsing, validation, relabeling and hashing.

An architecture is a DAG whose nodes are typed operations.  The order of
``nodes`` is the encoding order used by the tokenizer, so two graphs that are
isomorphic but listed in a different order are distinct ``ArchGraph`` values.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

MAX_ATTRS = 8
MAX_SHAPE = 4

DEFAULT_OPS = (
    "conv3x3",
    "conv1x1",
    "maxpool3x3",
    "avgpool3x3",
    "skip",
    "input",
    "output",
    "conv5x5",
    "sepconv3x3",
    "sepconv5x5",
    "dilconv3x3",
    "dilconv5x5",
    "zero",
    "add",
    "concat",
    "relu",
    "batchnorm",
    "dense",
    "global_pool",
    "softmax",
)


class GraphError(ValueError):
    """Raised for malformed or invalid architecture descriptions."""


class OpVocab:
    """Ordered mapping from operation name to a contiguous integer index."""

    def __init__(self, names: Iterable[str]):
        self._names = tuple(names)
        if len(set(self._names)) != len(self._names):
            raise GraphError("duplicate op names in vocabulary")
        self._index = {name: i for i, name in enumerate(self._names)}

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, int]) -> "OpVocab":
        indices = sorted(mapping.values())
        if indices != list(range(len(mapping))):
            raise GraphError("op indices must be unique and contiguous from 0")
        return cls(sorted(mapping, key=mapping.__getitem__))

    @classmethod
    def load(cls, path: str | Path) -> "OpVocab":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise GraphError(f"malformed vocabulary file: {exc}") from exc
        if not isinstance(data, dict):
            raise GraphError("vocabulary file must be a JSON object")
        return cls.from_mapping(data)

    def to_mapping(self) -> dict[str, int]:
        return dict(self._index)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise GraphError(f"unknown op {name!r}") from None

    def name(self, index: int) -> str:
        return self._names[index]

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, OpVocab) and self._names == other._names

    def __repr__(self) -> str:
        return f"OpVocab({list(self._names)!r})"


DEFAULT_VOCAB = OpVocab(DEFAULT_OPS)


@dataclass(frozen=True)
class NodeRecord:
    op_index: int
    attrs: tuple[float, ...] = ()
    output_shape: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.attrs) > MAX_ATTRS:
            raise GraphError(f"at most {MAX_ATTRS} attrs per node, got {len(self.attrs)}")
        if len(self.output_shape) > MAX_SHAPE:
            raise GraphError(
                f"at most {MAX_SHAPE} output_shape entries per node, got {len(self.output_shape)}"
            )
        if any(not math.isfinite(a) for a in self.attrs):
            raise GraphError("node attrs must be finite")
        if any(s < 0 for s in self.output_shape):
            raise GraphError("output_shape entries must be non-negative")


@dataclass(frozen=True)
class ArchGraph:
    nodes: tuple[NodeRecord, ...]
    edges: frozenset[tuple[int, int]]
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        validate(self)

    @classmethod
    def build(
        cls,
        ops: Sequence[int],
        edges: Iterable[tuple[int, int]],
        name: str | None = None,
    ) -> "ArchGraph":
        """Shorthand for graphs that carry only op indices."""
        edge_list = [(int(a), int(b)) for a, b in edges]
        if len(set(edge_list)) != len(edge_list):
            raise GraphError("duplicate edge")
        return cls(tuple(NodeRecord(int(op)) for op in ops), frozenset(edge_list), name)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def ops(self) -> list[int]:
        return [n.op_index for n in self.nodes]

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def to_dict(self, vocab: OpVocab | None = None) -> dict:
        vocab = vocab or DEFAULT_VOCAB
        nodes = []
        for node in self.nodes:
            rec: dict = {"op": vocab.name(node.op_index)}
            if node.attrs:
                rec["attrs"] = list(node.attrs)
            if node.output_shape:
                rec["output_shape"] = list(node.output_shape)
            nodes.append(rec)
        out: dict = {"nodes": nodes, "edges": [list(e) for e in self.sorted_edges()]}
        if self.name is not None:
            out["name"] = self.name
        return out

    def to_json(self, vocab: OpVocab | None = None) -> str:
        return json.dumps(self.to_dict(vocab))


def topological_order(n_nodes: int, edges: Iterable[tuple[int, int]]) -> list[int]:
    """Kahn's algorithm, smallest ready index first.

    Raises GraphError when the edge set contains a cycle.
    """
    import heapq

    succ: list[list[int]] = [[] for _ in range(n_nodes)]
    indeg = [0] * n_nodes
    for a, b in edges:
        succ[a].append(b)
        indeg[b] += 1
    ready = [i for i in range(n_nodes) if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(ready, w)
    if len(order) != n_nodes:
        raise GraphError("cycle detected")
    return order


def validate(g: ArchGraph) -> None:
    n = len(g.nodes)
    if n < 1:
        raise GraphError("graph must have at least one node")
    for a, b in g.edges:
        if not (0 <= a < n and 0 <= b < n):
            raise GraphError(f"edge ({a}, {b}) index out of range for {n} nodes")
        if a == b:
            raise GraphError(f"self-loop on node {a}")
    topological_order(n, g.edges)


def _parse_node(rec, vocab: OpVocab) -> NodeRecord:
    if not isinstance(rec, dict) or "op" not in rec:
        raise GraphError("each node must be an object with an 'op' field")
    op = vocab.index(rec["op"])
    attrs = rec.get("attrs", [])
    shape = rec.get("output_shape", [])
    if not isinstance(attrs, list) or not all(
        isinstance(a, (int, float)) and not isinstance(a, bool) for a in attrs
    ):
        raise GraphError("'attrs' must be an array of numbers")
    if not isinstance(shape, list) or not all(
        isinstance(s, int) and not isinstance(s, bool) for s in shape
    ):
        raise GraphError("'output_shape' must be an array of integers")
    return NodeRecord(op, tuple(float(a) for a in attrs), tuple(shape))


def arch_from_obj(obj, vocab: OpVocab | None = None) -> ArchGraph:
    vocab = vocab or DEFAULT_VOCAB
    if not isinstance(obj, dict):
        raise GraphError("architecture must be a JSON object")
    nodes_raw = obj.get("nodes")
    edges_raw = obj.get("edges", [])
    if not isinstance(nodes_raw, list):
        raise GraphError("'nodes' must be an array")
    if not isinstance(edges_raw, list):
        raise GraphError("'edges' must be an array")
    nodes = tuple(_parse_node(rec, vocab) for rec in nodes_raw)
    edges = []
    for e in edges_raw:
        if (
            not isinstance(e, list)
            or len(e) != 2
            or not all(isinstance(x, int) and not isinstance(x, bool) for x in e)
        ):
            raise GraphError(f"edge {e!r} must be a [src, dst] integer pair")
        edges.append((e[0], e[1]))
    if len(set(edges)) != len(edges):
        raise GraphError("duplicate edge")
    name = obj.get("name")
    return ArchGraph(nodes, frozenset(edges), name if isinstance(name, str) else None)


def parse_arch(text: str, vocab: OpVocab | None = None) -> ArchGraph:
    """Parse and validate a JSON architecture document."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphError(f"malformed JSON: {exc}") from exc
    return arch_from_obj(obj, vocab)


def load_arch(path: str | Path, vocab: OpVocab | None = None) -> ArchGraph:
    return parse_arch(Path(path).read_text(), vocab)


def predecessors(g: ArchGraph, i: int) -> set[int]:
    """Source positions of node ``i``; ``{-1}`` for nodes with no inputs."""
    if not 0 <= i < g.n_nodes:
        raise IndexError(f"node index {i} out of range for {g.n_nodes} nodes")
    preds = {a for a, b in g.edges if b == i}
    return preds or {-1}


def predecessor_lists(g: ArchGraph) -> list[list[int]]:
    preds: list[list[int]] = [[] for _ in range(g.n_nodes)]
    for a, b in g.sorted_edges():
        preds[b].append(a)
    return [p or [-1] for p in preds]


def _check_perm(g: ArchGraph, p: Sequence[int]) -> None:
    if len(p) != g.n_nodes:
        raise ValueError(f"permutation length {len(p)} != node count {g.n_nodes}")
    if sorted(p) != list(range(g.n_nodes)):
        raise ValueError("not a permutation of the node indices")


def is_flow_consistent_order(g: ArchGraph, p: Sequence[int]) -> bool:
    """True when relabeling by ``p`` keeps every edge pointing forward."""
    _check_perm(g, p)
    return all(p[a] < p[b] for a, b in g.edges)


def relabel(g: ArchGraph, p: Sequence[int]) -> ArchGraph:
    """Move the node at position ``i`` to position ``p[i]``."""
    _check_perm(g, p)
    nodes: list[NodeRecord | None] = [None] * g.n_nodes
    for i, node in enumerate(g.nodes):
        nodes[p[i]] = node
    edges = frozenset((p[a], p[b]) for a, b in g.edges)
    return ArchGraph(tuple(nodes), edges, g.name)


def invert_permutation(p: Sequence[int]) -> list[int]:
    inv = [0] * len(p)
    for i, pi in enumerate(p):
        inv[pi] = i
    return inv


def compose(p: Sequence[int], q: Sequence[int]) -> list[int]:
    """``(p o q)[i] = p[q[i]]``, i.e. apply ``q`` first."""
    return [p[qi] for qi in q]


def canonical_hash(g: ArchGraph) -> str:
    """Content digest of the ordered nodes and edges (not an isomorphism hash)."""
    payload = {
        "nodes": [[n.op_index, list(n.attrs), list(n.output_shape)] for n in g.nodes],
        "edges": [list(e) for e in g.sorted_edges()],
    }
    blob = json.dumps(payload, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
