"""Toy velocity-field network over latent frame sequences.

Sinusoidal time embedding, an input projection, a small stack of pre-norm
transformer blocks (bidirectional multi-head self-attention plus a gated
feed-forward, both residual), and a zero-initialized output head of width
d_audio so the initial field is exactly zero. There is no positional
encoding: per-frame conditioning supplies all position information, which
keeps the network permutation-equivariant over frames.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .conditioning import ConditioningBundle, assemble_input
from .errors import ContractError, DimensionError, ValidationError
from .tensor import (
    Tensor,
    add,
    add_row,
    concat_channels,
    fan_in_uniform,
    layer_norm,
    matmul,
    mul,
    scale,
    silu,
    softmax_rows,
    split_channels,
    transpose,
)

__all__ = ["ModelConfig", "time_embedding", "Block", "VelocityModel", "parameter_count"]


@dataclass(frozen=True)
class ModelConfig:
    n_blocks: int = 2
    model_width: int = 64
    n_heads: int = 4
    d_audio: int = 8
    d_t: int = 16
    d_text: int = 32
    d_lyrics: int = 16
    ff_mult: int = 2

    def __post_init__(self):
        if self.n_blocks < 1 or self.model_width < 1 or self.n_heads < 1:
            raise ValidationError("n_blocks, model_width, n_heads must be positive")
        if self.model_width % self.n_heads != 0:
            raise ValidationError(
                f"model_width {self.model_width} not divisible by n_heads {self.n_heads}"
            )
        if self.d_t < 4 or self.d_t % 2 != 0:
            raise ValidationError("d_t must be an even integer >= 4")

    @property
    def d_input(self) -> int:
        return self.d_text + self.d_lyrics + self.d_audio + self.d_t


def time_embedding(t: float, d_t: int) -> np.ndarray:
    """Sinusoidal features: pairs (sin(w_k t), cos(w_k t)) with w_k spaced
    geometrically in [1, 1000]."""
    if not (0.0 <= t <= 1.0):
        raise ContractError(f"time step {t} outside [0, 1]")
    if d_t < 4 or d_t % 2 != 0:
        raise ContractError("d_t must be an even integer >= 4")
    half = d_t // 2
    omegas = 1000.0 ** (np.arange(half) / (half - 1))
    emb = np.empty(d_t)
    emb[0::2] = np.sin(omegas * t)
    emb[1::2] = np.cos(omegas * t)
    return emb


class Block:
    """Pre-norm self-attention + gated feed-forward, both with residuals."""

    def __init__(self, width: int, n_heads: int, ff_mult: int, rng: np.random.Generator):
        self.width = width
        self.n_heads = n_heads
        self.head_dim = width // n_heads
        ff = ff_mult * width
        self.ln1_g = Tensor(np.ones(width), requires_grad=True)
        self.ln1_b = Tensor(np.zeros(width), requires_grad=True)
        self.wq = fan_in_uniform(rng, (width, width))
        self.wk = fan_in_uniform(rng, (width, width))
        self.wv = fan_in_uniform(rng, (width, width))
        self.wo = fan_in_uniform(rng, (width, width))
        self.ln2_g = Tensor(np.ones(width), requires_grad=True)
        self.ln2_b = Tensor(np.zeros(width), requires_grad=True)
        self.w_gate = fan_in_uniform(rng, (width, ff))
        self.w_up = fan_in_uniform(rng, (width, ff))
        self.w_down = fan_in_uniform(rng, (ff, width))

    def forward(self, x: Tensor, attn_sink: list | None = None) -> Tensor:
        h = layer_norm(x, self.ln1_g, self.ln1_b)
        q = matmul(h, self.wq)
        k = matmul(h, self.wk)
        v = matmul(h, self.wv)
        outs = []
        inv_sqrt = 1.0 / np.sqrt(self.head_dim)
        for qh, kh, vh in zip(
            split_channels(q, self.n_heads),
            split_channels(k, self.n_heads),
            split_channels(v, self.n_heads),
        ):
            weights = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt))
            if attn_sink is not None:
                attn_sink.append(weights.data.copy())
            outs.append(matmul(weights, vh))
        x = add(x, matmul(concat_channels(outs), self.wo))
        h2 = layer_norm(x, self.ln2_g, self.ln2_b)
        ff = matmul(mul(silu(matmul(h2, self.w_gate)), matmul(h2, self.w_up)), self.w_down)
        return add(x, ff)

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [
            (f"{prefix}.ln1.gain", self.ln1_g),
            (f"{prefix}.ln1.bias", self.ln1_b),
            (f"{prefix}.wq", self.wq),
            (f"{prefix}.wk", self.wk),
            (f"{prefix}.wv", self.wv),
            (f"{prefix}.wo", self.wo),
            (f"{prefix}.ln2.gain", self.ln2_g),
            (f"{prefix}.ln2.bias", self.ln2_b),
            (f"{prefix}.ff.gate", self.w_gate),
            (f"{prefix}.ff.up", self.w_up),
            (f"{prefix}.ff.down", self.w_down),
        ]


class VelocityModel:
    """Maps (t, conditioning, x_t) to a per-frame velocity of width d_audio."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        w = config.model_width
        self.w_in = fan_in_uniform(rng, (config.d_input, w))
        self.b_in = Tensor(np.zeros(w), requires_grad=True)
        self.blocks = [Block(w, config.n_heads, config.ff_mult, rng) for _ in range(config.n_blocks)]
        # Zero-initialized head: the untrained velocity field is identically 0.
        self.w_head = Tensor(np.zeros((w, config.d_audio)), requires_grad=True)
        self.b_head = Tensor(np.zeros(config.d_audio), requires_grad=True)

    def forward(
        self,
        x_t: Tensor,
        cond: ConditioningBundle,
        t: float,
        attn_sink: list | None = None,
    ) -> Tensor:
        cfg = self.config
        if x_t.data.ndim != 2 or x_t.data.shape[1] != cfg.d_audio:
            raise DimensionError(f"x_t must be (T, {cfg.d_audio}), got {x_t.data.shape}")
        T = x_t.data.shape[0]
        if cond.e_text.data.shape != (T, cfg.d_text):
            raise DimensionError(
                f"e_text must be ({T}, {cfg.d_text}), got {cond.e_text.data.shape}"
            )
        if cond.e_lyrics.data.shape != (T, cfg.d_lyrics):
            raise DimensionError(
                f"e_lyrics must be ({T}, {cfg.d_lyrics}), got {cond.e_lyrics.data.shape}"
            )
        e_t = Tensor(np.tile(time_embedding(t, cfg.d_t), (T, 1)))
        bundle = replace(cond, e_audio=x_t, e_t=e_t)
        h = add_row(matmul(assemble_input(bundle), self.w_in), self.b_in)
        for block in self.blocks:
            h = block.forward(h, attn_sink=attn_sink)
        return add_row(matmul(h, self.w_head), self.b_head)

    def named_parameters(self, prefix: str = "backbone") -> list[tuple[str, Tensor]]:
        named = [(f"{prefix}.input.w", self.w_in), (f"{prefix}.input.b", self.b_in)]
        for i, block in enumerate(self.blocks):
            named.extend(block.named_parameters(f"{prefix}.block{i}"))
        named.extend([(f"{prefix}.head.w", self.w_head), (f"{prefix}.head.b", self.b_head)])
        return named

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def parameter_count(config: ModelConfig) -> int:
    """Closed form matched by a regression test:
    input d_in*w + w; per block 4*w^2 + 3*w*ff + 4*w; head w*d_audio + d_audio."""
    w = config.model_width
    ff = config.ff_mult * w
    per_block = 4 * w * w + 3 * w * ff + 4 * w
    return config.d_input * w + w + config.n_blocks * per_block + w * config.d_audio + config.d_audio
