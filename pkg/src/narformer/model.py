"""Multi-stage fusion transformer predicting one scalar per architecture.

Pipeline: depth-token projection -> stacked pre-norm transformer blocks
(giving ``H``) -> for each fusion stage an aggregation block (learnable
queries attend over the previous stage) and a fusion block (those tokens
attend back over ``H``) -> prediction head.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .tokenizer import TokenSequence


@dataclass
class ModelConfig:
    D: int
    n_stage1_blocks: int = 6
    head_dim: int = 32
    n_heads: int | None = None
    ffn_ratio: int = 4
    fusion_stages: tuple[int, ...] = (4, 2, 1)
    use_standard_block_in_fusion: bool = False
    head_hidden_sizes: tuple[int, ...] = (128,)
    head_activation: str = "sigmoid"
    query_init_std: float = 0.02

    def __post_init__(self):
        self.fusion_stages = tuple(int(s) for s in self.fusion_stages)
        self.head_hidden_sizes = tuple(int(s) for s in self.head_hidden_sizes)
        if self.n_heads is None:
            self.n_heads = max(1, self.D // self.head_dim)
        if self.D % self.n_heads:
            raise ValueError(f"n_heads={self.n_heads} does not divide D={self.D}; set n_heads")
        if not self.fusion_stages:
            raise ValueError("fusion_stages must not be empty")
        if self.fusion_stages[-1] != 1:
            raise ValueError("last fusion stage must have exactly 1 query token")
        if any(a <= b for a, b in zip(self.fusion_stages, self.fusion_stages[1:])):
            raise ValueError("fusion_stages must be strictly decreasing")
        if self.head_activation not in ("sigmoid", "identity"):
            raise ValueError("head_activation must be 'sigmoid' or 'identity'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion_stages"] = list(self.fusion_stages)
        d["head_hidden_sizes"] = list(self.head_hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# ---- parameter construction -------------------------------------------------


def _xavier(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def _add_linear(params, rng, prefix, fan_in, fan_out, dtype):
    params[f"{prefix}.W"] = _xavier(rng, fan_in, fan_out, dtype)
    params[f"{prefix}.b"] = np.zeros(fan_out, dtype=dtype)


def _add_ln(params, prefix, D, dtype):
    params[f"{prefix}.g"] = np.ones(D, dtype=dtype)
    params[f"{prefix}.b"] = np.zeros(D, dtype=dtype)


def _add_block(params, rng, prefix, cfg, dtype, cross):
    D = cfg.D
    if cross:
        _add_ln(params, f"{prefix}.ln_q", D, dtype)
        _add_ln(params, f"{prefix}.ln_kv", D, dtype)
    else:
        _add_ln(params, f"{prefix}.ln1", D, dtype)
    for name in ("q", "k", "v", "o"):
        _add_linear(params, rng, f"{prefix}.attn.{name}", D, D, dtype)
    _add_ln(params, f"{prefix}.ln2", D, dtype)
    _add_linear(params, rng, f"{prefix}.ffn.1", D, cfg.ffn_ratio * D, dtype)
    _add_linear(params, rng, f"{prefix}.ffn.2", cfg.ffn_ratio * D, D, dtype)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {k: v.shape for k, v in _build(cfg, np.random.default_rng(0), np.float32).items()}


def _build(cfg: ModelConfig, rng, dtype) -> dict[str, np.ndarray]:
    D = cfg.D
    params: dict[str, np.ndarray] = {}
    _add_linear(params, rng, "depth", D, D, dtype)
    for i in range(cfg.n_stage1_blocks):
        _add_block(params, rng, f"stage1.{i}", cfg, dtype, cross=False)
    for k, n_k in enumerate(cfg.fusion_stages):
        params[f"agg{k}.query"] = (rng.standard_normal((n_k, D)) * cfg.query_init_std).astype(dtype)
        _add_block(params, rng, f"agg{k}", cfg, dtype, cross=True)
        if cfg.use_standard_block_in_fusion:
            _add_block(params, rng, f"refine{k}", cfg, dtype, cross=False)
        _add_block(params, rng, f"fuse{k}", cfg, dtype, cross=True)
    sizes = [D, *cfg.head_hidden_sizes, 1]
    for j, (a, b) in enumerate(zip(sizes, sizes[1:])):
        _add_linear(params, rng, f"head.{j}", a, b, dtype)
    return params


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    return {k: Tensor(v, requires_grad=True) for k, v in _build(cfg, rng, dtype).items()}


# ---- batching ---------------------------------------------------------------


@dataclass
class Batch:
    """Right-padded token matrices; the depth row of sample ``b`` is ``n_nodes[b] + 1``."""

    tokens: np.ndarray
    mask: np.ndarray
    n_nodes: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.tokens.shape[0]


def collate(seqs: Sequence[TokenSequence], dtype=np.float32) -> Batch:
    if not seqs:
        raise ValueError("cannot collate an empty batch")
    width = seqs[0].tokens.shape[1]
    rows = max(s.tokens.shape[0] for s in seqs)
    tokens = np.zeros((len(seqs), rows, width), dtype=dtype)
    mask = np.zeros((len(seqs), rows), dtype=bool)
    for b, s in enumerate(seqs):
        if s.tokens.shape[1] != width:
            raise ShapeError("token width differs within batch")
        r = s.tokens.shape[0]
        tokens[b, :r] = s.tokens
        mask[b, :r] = True
    return Batch(tokens, mask, np.array([s.n_nodes for s in seqs]))


# ---- blocks -----------------------------------------------------------------


def _ln(x, p, prefix):
    return ad.layer_norm_rows(x, p[f"{prefix}.g"], p[f"{prefix}.b"])


def _lin(x, p, prefix):
    return ad.affine(x, p[f"{prefix}.W"], p[f"{prefix}.b"])


def _mha(q_in, kv_in, p, prefix, n_heads, key_mask):
    q = _lin(q_in, p, f"{prefix}.attn.q")
    k = _lin(kv_in, p, f"{prefix}.attn.k")
    v = _lin(kv_in, p, f"{prefix}.attn.v")
    return _lin(ad.scaled_dot_attention(q, k, v, n_heads, key_mask), p, f"{prefix}.attn.o")


def _ffn(x, p, prefix):
    return _lin(ad.relu(_lin(x, p, f"{prefix}.ffn.1")), p, f"{prefix}.ffn.2")


def standard_block(x, p, prefix, cfg, mask=None):
    h = _ln(x, p, f"{prefix}.ln1")
    x = x + _mha(h, h, p, prefix, cfg.n_heads, mask)
    return x + _ffn(_ln(x, p, f"{prefix}.ln2"), p, prefix)


def cross_block(query, kv, p, prefix, cfg, kv_mask=None):
    # token count changes between query and output, so no residual around attention
    h = _mha(_ln(query, p, f"{prefix}.ln_q"), _ln(kv, p, f"{prefix}.ln_kv"), p, prefix, cfg.n_heads, kv_mask)
    return h + _ffn(_ln(h, p, f"{prefix}.ln2"), p, prefix)


# ---- model ------------------------------------------------------------------


def embed(batch: Batch, p, cfg: ModelConfig) -> Tensor:
    """Replace each raw depth row by ReLU(FC(depth row))."""
    B, rows, D = batch.tokens.shape
    if D != cfg.D:
        raise ShapeError(f"token width {D} does not match model width {cfg.D}")
    idx = np.arange(B)
    depth_pos = batch.n_nodes + 1
    depth_raw = batch.tokens[idx, depth_pos][:, None, :]
    base = batch.tokens.copy()
    base[idx, depth_pos] = 0
    onehot = np.zeros((B, rows, 1), dtype=batch.tokens.dtype)
    onehot[idx, depth_pos] = 1
    depth = ad.relu(_lin(Tensor(depth_raw), p, "depth"))
    return ad.add(Tensor(base), ad.mul(Tensor(onehot), depth))


def stage1(batch: Batch, p, cfg: ModelConfig) -> Tensor:
    """Token sequence -> intermediate representation H, shape (B, rows, D)."""
    x = embed(batch, p, cfg)
    for i in range(cfg.n_stage1_blocks):
        x = standard_block(x, p, f"stage1.{i}", cfg, batch.mask)
    return x


def multi_stage_fuse(H: Tensor, p, cfg: ModelConfig, mask=None, trace: list | None = None) -> Tensor:
    """Shrink H to a single token per sample, shape (B, 1, D).

    If ``trace`` is a list, the token count after each stage is appended.
    """
    if not cfg.fusion_stages:
        raise ValueError("no fusion stages configured")
    if H.shape[-1] != cfg.D:
        raise ShapeError(f"H width {H.shape[-1]} != D={cfg.D}")
    z, z_mask = H, mask
    for k in range(len(cfg.fusion_stages)):
        query = p[f"agg{k}.query"]
        agg = cross_block(query, z, p, f"agg{k}", cfg, z_mask)
        if cfg.use_standard_block_in_fusion:
            agg = standard_block(agg, p, f"refine{k}", cfg)
        z = cross_block(agg, H, p, f"fuse{k}", cfg, mask)
        z_mask = None
        if trace is not None:
            trace.append(z.shape[-2])
    return z


def head(e: Tensor, p, cfg: ModelConfig) -> Tensor:
    n_layers = len(cfg.head_hidden_sizes) + 1
    x = e
    for j in range(n_layers):
        x = _lin(x, p, f"head.{j}")
        if j < n_layers - 1:
            x = ad.relu(x)
    if cfg.head_activation == "sigmoid":
        x = ad.sigmoid(x)
    return x


def forward_batch(batch: Batch, p, cfg: ModelConfig) -> Tensor:
    """Predictions for every sample in the batch, shape (B,)."""
    H = stage1(batch, p, cfg)
    e = multi_stage_fuse(H, p, cfg, batch.mask)
    y = head(ad.reshape(e, (len(batch), cfg.D)), p, cfg)
    return ad.reshape(y, (len(batch),))


def forward(T: TokenSequence, p, cfg: ModelConfig) -> float:
    with ad.no_grad():
        return forward_batch(collate([T], dtype=_param_dtype(p)), p, cfg).item()


def predict(seqs: Sequence[TokenSequence], p, cfg: ModelConfig, batch_size: int = 64) -> np.ndarray:
    dtype = _param_dtype(p)
    out = []
    with ad.no_grad():
        for start in range(0, len(seqs), batch_size):
            chunk = seqs[start : start + batch_size]
            out.append(forward_batch(collate(chunk, dtype=dtype), p, cfg).data)
    return np.concatenate(out).astype(np.float64) if out else np.zeros(0)


def _param_dtype(p):
    return next(iter(p.values())).dtype


def copy_params(p: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(v.data.copy(), requires_grad=True) for k, v in p.items()}


def count_params(p: dict[str, Tensor]) -> int:
    return sum(v.data.size for v in p.values())
