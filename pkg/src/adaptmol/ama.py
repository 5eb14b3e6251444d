"""Adaptive multi-level attention: local (node) then global (molecule) gated fusion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .encoders import affine, glorot, zeros_param

MASK_FILL = -1e30


@dataclass(frozen=True)
class AmaConfig:
    beta_min: float = 0.9
    beta_max: float = 1.1
    k: float = 2.0
    heads: int = 2

    def __post_init__(self):
        if not self.beta_min <= self.beta_max:
            raise ValueError("beta_min must not exceed beta_max")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")

    @property
    def beta_mid(self) -> float:
        return (self.beta_min + self.beta_max) / 2


def beta(level: str, modality: str, cfg: AmaConfig) -> float:
    """Modality weight for a fusion level.

    The graph weight at the local level and the sequence weight at the global
    level take the "raised" branch; the other two take the "lowered" branch.
    """
    if level not in ("local", "global") or modality not in ("graph", "sequence"):
        raise ValueError(f"unknown level/modality {level!r}/{modality!r}")
    raised = (level == "local") == (modality == "graph")
    if raised:
        return cfg.beta_min + (cfg.beta_max - cfg.beta_min) * cfg.k
    return cfg.beta_mid - (cfg.beta_mid - cfg.beta_min) * cfg.k


@dataclass
class AmaParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    wg: Tensor
    bg: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, graph_dim: int, seq_dim: int) -> "AmaParams":
        d_in = graph_dim + seq_dim
        return cls(
            wq=glorot(rng, d_in, graph_dim),
            wk=glorot(rng, d_in, graph_dim),
            wv=glorot(rng, d_in, graph_dim),
            wo=glorot(rng, graph_dim, graph_dim),
            wg=glorot(rng, d_in, graph_dim),
            bg=zeros_param(1, graph_dim),
        )

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"ama.{n}", getattr(self, n)) for n in ("wq", "wk", "wv", "wo", "wg", "bg")]


def _check(nodes: Tensor, seq: np.ndarray, params: AmaParams, cfg: AmaConfig) -> None:
    dg = params.wo.shape[0]
    if nodes.value.ndim != 2 or nodes.shape[1] != dg:
        raise DimensionError(f"node matrix {nodes.shape} does not match hidden size {dg}")
    if seq.shape[-1] + dg != params.wq.shape[0]:
        raise DimensionError(
            f"sequence width {seq.shape} does not match projection {params.wq.shape}")
    if dg % cfg.heads:
        raise DimensionError(f"hidden size {dg} not divisible by {cfg.heads} heads")


def local_attention(nodes: Tensor, seq_rows: np.ndarray, block_mask: np.ndarray,
                    params: AmaParams, cfg: AmaConfig) -> Tensor:
    """Sigmoid-gated multi-head self-attention map, shape (n, d_g).

    ``seq_rows`` holds each node's molecule-level sequence vector and
    ``block_mask`` is 0 within a molecule and MASK_FILL across molecules, so a
    batch of molecules attends exactly as if each were processed alone.
    """
    _check(nodes, seq_rows, params, cfg)
    dg = nodes.shape[1]
    fused = ad.concat_columns([
        nodes * beta("local", "graph", cfg),
        Tensor(seq_rows * beta("local", "sequence", cfg)),
    ])
    q, k, v = fused @ params.wq, fused @ params.wk, fused @ params.wv
    hd = dg // cfg.heads
    mask = Tensor(block_mask)
    heads = []
    for h in range(cfg.heads):
        lo, hi = h * hd, (h + 1) * hd
        qh, kh, vh = (ad.slice_columns(t, lo, hi) for t in (q, k, v))
        scores = ad.scale(qh @ kh.T, 1.0 / np.sqrt(hd)) + mask
        heads.append(ad.softmax(scores) @ vh)
    merged = heads[0] if len(heads) == 1 else ad.concat_columns(heads)
    return ad.sigmoid(merged @ params.wo)


def global_attention(pooled: Tensor, seq: np.ndarray, params: AmaParams, cfg: AmaConfig) -> Tensor:
    fused = ad.concat_columns([
        pooled * beta("global", "graph", cfg),
        Tensor(seq * beta("global", "sequence", cfg)),
    ])
    return ad.sigmoid(affine(fused, params.wg, params.bg))


def local_fuse(nodes: Tensor, seq: np.ndarray, params: AmaParams, cfg: AmaConfig) -> Tensor:
    """Locally refined node matrix for one molecule, shape (N, d_g)."""
    seq = np.asarray(seq, dtype=np.float64)
    n = nodes.shape[0]
    attn = local_attention(nodes, np.tile(seq, (n, 1)), np.zeros((n, n)), params, cfg)
    return ad.multiply(attn, nodes)


def global_fuse(nodes: Tensor, seq: np.ndarray, params: AmaParams, cfg: AmaConfig) -> Tensor:
    """Molecule vector (d_g,) from refined nodes: mean-pool then gate."""
    if nodes.value.ndim != 2 or nodes.shape[0] == 0:
        raise ValueError("global_fuse needs at least one node")
    seq = np.asarray(seq, dtype=np.float64)
    row = ad.reshape(ad.mean_rows(nodes), (1, nodes.shape[1]))
    gate = global_attention(row, seq[None, :], params, cfg)
    return ad.reshape(ad.multiply(gate, row), (nodes.shape[1],))


def ama_forward(nodes: Tensor, seq: np.ndarray, params: AmaParams, cfg: AmaConfig) -> Tensor:
    return global_fuse(local_fuse(nodes, seq, params, cfg), seq, params, cfg)


def ama_forward_batch(nodes: Tensor, seq: np.ndarray, membership: np.ndarray,
                      params: AmaParams, cfg: AmaConfig) -> Tensor:
    """Fuse a block-diagonal batch.

    ``membership`` is (B, n) with 1 where node j belongs to molecule b;
    ``seq`` is (B, d_a). Returns (B, d_g).
    """
    seq = np.asarray(seq, dtype=np.float64)
    same = membership.T @ membership
    block_mask = np.where(same > 0, 0.0, MASK_FILL)
    refined = ad.multiply(local_attention(nodes, membership.T @ seq, block_mask, params, cfg), nodes)
    pool = membership / membership.sum(axis=1, keepdims=True)
    pooled = Tensor(pool) @ refined
    gate = global_attention(pooled, seq, params, cfg)
    return ad.multiply(gate, pooled)
