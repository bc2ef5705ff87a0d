"""A small pre-norm transformer encoder and the analytical compute model.

The encoder exists to give the pipeline a realistic downstream consumer of
the compressed token set; its weights come from a seeded uniform init and
are never trained. The FLOP model is the hardware-independent stand-in for
wall-clock latency. Per block and per view, with N tokens and width C:

  attention_flops = 4*N*C^2 + 2*N^2*C
  mlp_flops       = 2*N*C*hidden*2          (hidden = round(mlp_ratio*C))

plus, outside the blocks:

  embedding_flops   = 2*N*P^2*channels*C    (patch projection multiply-adds)
  enhancement_flops = 2*N_ips*M*C + 2*Kc*Kf*C + 2*Kc*Kf*C

where N_ips is the token count the query cross-attention runs over
(defaults to N), M the query count, and Kc/Kf the selected coarse/fine
counts. All counts are exact integers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import TokenSet
from .enhancement import SelectionMask
from .numerics import softmax_rows

LAYERNORM_EPS = 1e-6


@dataclass
class EncoderConfig:
    depth: int
    feature_dim: int = 256
    heads: int = 8
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError(f"depth must be >= 0, got {self.depth}")
        if self.feature_dim % self.heads != 0:
            raise ValueError(
                f"feature_dim {self.feature_dim} not divisible by heads {self.heads}"
            )
        if self.feature_dim % 4 != 0:
            raise ValueError(
                f"feature_dim {self.feature_dim} must be divisible by 4"
            )
        if self.mlp_ratio <= 0:
            raise ValueError(f"mlp_ratio must be positive, got {self.mlp_ratio}")

    @property
    def hidden_dim(self) -> int:
        return int(round(self.mlp_ratio * self.feature_dim))


@dataclass
class BlockWeights:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class EncoderWeights:
    blocks: list[BlockWeights] = field(default_factory=list)


def init_encoder_weights(cfg: EncoderConfig, seed: int) -> EncoderWeights:
    """Uniform(-1/sqrt(C), 1/sqrt(C)) projections, standard norm init."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE2C0DE]))
    c = cfg.feature_dim
    hidden = cfg.hidden_dim
    bound = 1.0 / np.sqrt(c)
    blocks = []
    for _ in range(cfg.depth):
        blocks.append(
            BlockWeights(
                ln1_gamma=np.ones(c),
                ln1_beta=np.zeros(c),
                w_q=rng.uniform(-bound, bound, (c, c)),
                w_k=rng.uniform(-bound, bound, (c, c)),
                w_v=rng.uniform(-bound, bound, (c, c)),
                w_o=rng.uniform(-bound, bound, (c, c)),
                ln2_gamma=np.ones(c),
                ln2_beta=np.zeros(c),
                w1=rng.uniform(-bound, bound, (c, hidden)),
                b1=np.zeros(hidden),
                w2=rng.uniform(-bound, bound, (hidden, c)),
                b2=np.zeros(c),
            )
        )
    return EncoderWeights(blocks=blocks)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + LAYERNORM_EPS) * gamma + beta


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def _self_attention(x: np.ndarray, blk: BlockWeights, heads: int) -> np.ndarray:
    n, c = x.shape
    d = c // heads
    q = (x @ blk.w_q).reshape(n, heads, d)
    k = (x @ blk.w_k).reshape(n, heads, d)
    v = (x @ blk.w_v).reshape(n, heads, d)
    out = np.empty_like(q)
    for h in range(heads):
        weights = softmax_rows(q[:, h, :] @ k[:, h, :].T / np.sqrt(d))
        out[:, h, :] = weights @ v[:, h, :]
    return out.reshape(n, c) @ blk.w_o


def encoder_forward(
    tokens: TokenSet, cfg: EncoderConfig, weights: EncoderWeights
) -> TokenSet:
    """Pre-norm blocks: x += attn(ln(x)); x += mlp(ln(x)).

    depth 0 is the identity; so is any block whose projections are all zero,
    since only the residual path survives.
    """
    x = tokens.features
    if x.shape[1] != cfg.feature_dim:
        raise ValueError(
            f"token width {x.shape[1]} != configured feature_dim {cfg.feature_dim}"
        )
    if len(weights.blocks) != cfg.depth:
        raise ValueError(
            f"{len(weights.blocks)} weight blocks for depth {cfg.depth}"
        )
    for blk in weights.blocks:
        x = x + _self_attention(layer_norm(x, blk.ln1_gamma, blk.ln1_beta), blk, cfg.heads)
        h = gelu(layer_norm(x, blk.ln2_gamma, blk.ln2_beta) @ blk.w1 + blk.b1)
        x = x + h @ blk.w2 + blk.b2
    return TokenSet(features=x, grid=tokens.grid, patch_size=tokens.patch_size)


@dataclass
class FlopReport:
    tokens_per_view: int
    attention_flops: int
    mlp_flops: int
    embedding_flops: int
    enhancement_flops: int
    total: int

    @classmethod
    def build(
        cls,
        tokens_per_view: int,
        attention_flops: int = 0,
        mlp_flops: int = 0,
        embedding_flops: int = 0,
        enhancement_flops: int = 0,
    ) -> "FlopReport":
        return cls(
            tokens_per_view=tokens_per_view,
            attention_flops=attention_flops,
            mlp_flops=mlp_flops,
            embedding_flops=embedding_flops,
            enhancement_flops=enhancement_flops,
            total=attention_flops + mlp_flops + embedding_flops + enhancement_flops,
        )

    def __add__(self, other: "FlopReport") -> "FlopReport":
        return FlopReport.build(
            tokens_per_view=self.tokens_per_view,
            attention_flops=self.attention_flops + other.attention_flops,
            mlp_flops=self.mlp_flops + other.mlp_flops,
            embedding_flops=self.embedding_flops + other.embedding_flops,
            enhancement_flops=self.enhancement_flops + other.enhancement_flops,
        )

    def as_dict(self) -> dict[str, int]:
        return {
            "tokens_per_view": self.tokens_per_view,
            "attention_flops": self.attention_flops,
            "mlp_flops": self.mlp_flops,
            "embedding_flops": self.embedding_flops,
            "enhancement_flops": self.enhancement_flops,
            "total": self.total,
        }


def embedding_flops(n_tokens: int, patch_size: int, channels: int, feature_dim: int) -> int:
    return 2 * n_tokens * patch_size * patch_size * channels * feature_dim


def flops_estimate(
    n_tokens: int,
    cfg: EncoderConfig,
    selection: SelectionMask | None = None,
    num_queries: int = 0,
    patch_size: int | None = None,
    channels: int = 1,
    ips_tokens: int | None = None,
) -> FlopReport:
    """Closed-form per-view operation count for one token set.

    The embedding term is included when `patch_size` is given; the
    enhancement terms when `num_queries` (query cross-attention over
    `ips_tokens`, default n_tokens) and/or a nonempty `selection` are given.
    """
    c = cfg.feature_dim
    n = int(n_tokens)
    if n == 0:
        return FlopReport.build(tokens_per_view=0)
    attention = cfg.depth * (4 * n * c * c + 2 * n * n * c)
    mlp = cfg.depth * (2 * n * c * cfg.hidden_dim * 2)
    embed = embedding_flops(n, patch_size, channels, c) if patch_size else 0
    enhance = 0
    if num_queries > 0:
        n_ips = n if ips_tokens is None else int(ips_tokens)
        enhance += 2 * n_ips * num_queries * c
    if selection is not None and not selection.is_empty:
        k_c = int(selection.coarse_indices.size)
        k_f = int(selection.fine_indices.size)
        enhance += 2 * k_c * k_f * c + 2 * k_c * k_f * c
    return FlopReport.build(
        tokens_per_view=n,
        attention_flops=attention,
        mlp_flops=mlp,
        embedding_flops=embed,
        enhancement_flops=enhance,
    )
