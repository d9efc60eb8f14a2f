"""Sinusoidal tokenizer turning an ArchGraph into an (N+2) x D token matrix.

Each node token is the concatenation of an op-type block, a self-position
block and a source-position block (the summed encodings of the node's
predecessors).  Extended mode appends 8 attribute and 4 output-shape blocks
per node for latency prediction.  The final two rows are the end token and the
raw depth encoding; the learnable projection of the depth row lives in the
model.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .arch_graph import MAX_ATTRS, MAX_SHAPE, ArchGraph

END_VALUE = 1e5
BIN_MAGIC = b"NART"


@dataclass(frozen=True)
class EncoderSpec:
    L_op: int = 32
    L_self: int = 32
    L_sour: int = 32
    extended: bool = False
    L_attr: int = 4
    L_shape: int = 4
    # "concat" keeps a separate self-position block; "add" sums it into the op block
    self_id: str = "concat"
    attr_scale: float = 1.0

    def __post_init__(self):
        for name in ("L_op", "L_self", "L_sour", "L_attr", "L_shape"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be >= 2")
        if self.self_id not in ("concat", "add"):
            raise ValueError("self_id must be 'concat' or 'add'")
        if self.self_id == "add" and self.L_self != self.L_op:
            raise ValueError("self_id='add' requires L_self == L_op")
        if not self.attr_scale > 0:
            raise ValueError("attr_scale must be positive")

    @property
    def D(self) -> int:
        width = self.L_op + self.L_sour
        if self.self_id == "concat":
            width += self.L_self
        if self.extended:
            width += MAX_ATTRS * self.L_attr + MAX_SHAPE * self.L_shape
        return 2 * width

    @property
    def L_dep(self) -> int:
        return self.D // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(**d)


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray
    n_nodes: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.tokens.shape


def freq_vector(L: int) -> np.ndarray:
    """Frequencies linearly interpolated between 1 and 2**(L-1)."""
    if L < 2:
        raise ValueError("L must be >= 2")
    top = 2.0 ** (L - 1)
    step = (top - 1.0) / (L - 1)
    b = 1.0 + step * np.arange(L, dtype=np.float64)
    b[-1] = top
    return b


def encode_scalar(p, L: int) -> np.ndarray:
    """Interleaved ``sin(b_k p pi), cos(b_k p pi)`` features.

    ``p`` may be a scalar (returns shape ``(2L,)``) or an array (returns
    ``p.shape + (2L,)``).
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot encode a non-finite value")
    phase = arr[..., None] * freq_vector(L) * math.pi
    out = np.empty(arr.shape + (2 * L,), dtype=np.float64)
    out[..., 0::2] = np.sin(phase)
    out[..., 1::2] = np.cos(phase)
    return out


def _node_blocks(g: ArchGraph, spec: EncoderSpec) -> np.ndarray:
    n = g.n_nodes
    op_block = encode_scalar(np.array(g.ops, dtype=np.float64), spec.L_op)
    self_block = encode_scalar(np.arange(n, dtype=np.float64), spec.L_self)

    edges = np.array(g.sorted_edges(), dtype=np.int64).reshape(-1, 2)
    sour_block = np.zeros((n, 2 * spec.L_sour))
    if len(edges):
        np.add.at(sour_block, edges[:, 1], encode_scalar(edges[:, 0].astype(np.float64), spec.L_sour))
    roots = np.ones(n, dtype=bool)
    roots[edges[:, 1]] = False
    sour_block[roots] = encode_scalar(-1.0, spec.L_sour)

    if spec.self_id == "add":
        blocks = [op_block + self_block, sour_block]
    else:
        blocks = [op_block, self_block, sour_block]
    if spec.extended:
        attrs = np.zeros((n, MAX_ATTRS))
        shapes = np.zeros((n, MAX_SHAPE))
        for i, node in enumerate(g.nodes):
            attrs[i, : len(node.attrs)] = node.attrs
            shapes[i, : len(node.output_shape)] = node.output_shape
        attrs /= spec.attr_scale
        shapes /= spec.attr_scale
        blocks.append(encode_scalar(attrs, spec.L_attr).reshape(n, -1))
        blocks.append(encode_scalar(shapes, spec.L_shape).reshape(n, -1))
    return np.concatenate(blocks, axis=1)


def encode_node(g: ArchGraph, i: int, spec: EncoderSpec) -> np.ndarray:
    if not 0 <= i < g.n_nodes:
        raise IndexError(f"node index {i} out of range for {g.n_nodes} nodes")
    node = g.nodes[i]
    preds = sorted({a for a, b in g.edges if b == i}) or [-1]
    op = encode_scalar(node.op_index, spec.L_op)
    own = encode_scalar(i, spec.L_self)
    sour = encode_scalar(np.array(preds, dtype=np.float64), spec.L_sour).sum(axis=0)
    parts = [op + own, sour] if spec.self_id == "add" else [op, own, sour]
    if spec.extended:
        attrs = np.zeros(MAX_ATTRS)
        attrs[: len(node.attrs)] = node.attrs
        shape = np.zeros(MAX_SHAPE)
        shape[: len(node.output_shape)] = node.output_shape
        parts.append(encode_scalar(attrs / spec.attr_scale, spec.L_attr).ravel())
        parts.append(encode_scalar(shape / spec.attr_scale, spec.L_shape).ravel())
    return np.concatenate(parts)


def encode_end(spec: EncoderSpec) -> np.ndarray:
    op = encode_scalar(END_VALUE, spec.L_op)
    own = encode_scalar(END_VALUE, spec.L_self)
    sour = encode_scalar(END_VALUE, spec.L_sour)
    parts = [op + own, sour] if spec.self_id == "add" else [op, own, sour]
    if spec.extended:
        parts.append(np.tile(encode_scalar(END_VALUE, spec.L_attr), MAX_ATTRS))
        parts.append(np.tile(encode_scalar(END_VALUE, spec.L_shape), MAX_SHAPE))
    return np.concatenate(parts)


def encode_depth_raw(N: int, spec: EncoderSpec) -> np.ndarray:
    if N < 1:
        raise ValueError("depth must be >= 1")
    return encode_scalar(float(N), spec.L_dep)


def tokenize(g: ArchGraph, spec: EncoderSpec) -> TokenSequence:
    n = g.n_nodes
    tokens = np.empty((n + 2, spec.D), dtype=np.float64)
    tokens[:n] = _node_blocks(g, spec)
    tokens[n] = encode_end(spec)
    tokens[n + 1] = encode_depth_raw(n, spec)
    return TokenSequence(tokens, n)


def to_binary(seq: TokenSequence) -> bytes:
    rows, cols = seq.tokens.shape
    header = BIN_MAGIC + struct.pack("<III", rows, cols, 0)
    return header + seq.tokens.astype("<f4").tobytes()


def from_binary(blob: bytes) -> np.ndarray:
    if len(blob) < 16 or blob[:4] != BIN_MAGIC:
        raise ValueError("not a token matrix (bad magic)")
    rows, cols, _ = struct.unpack("<III", blob[4:16])
    body = blob[16:]
    if len(body) != rows * cols * 4:
        raise ValueError("token matrix payload size mismatch")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols)
