"""Bidirectional transformer encoder over padded behavior sequences."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def _check_mask(mask: torch.Tensor):
    if not bool(mask.any(-1).all()):
        raise ValueError("sequence without any real position")


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, d: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        if d % n_heads:
            raise ValueError(f"d={d} not divisible by n_heads={n_heads}")
        self.d, self.n_heads, self.head_dim = d, n_heads, d // n_heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        self.dropout = nn.Dropout(dropout)

    def _heads(self, x: torch.Tensor) -> torch.Tensor:
        *lead, T, _ = x.shape
        return x.view(*lead, T, self.n_heads, self.head_dim).transpose(-3, -2)

    def weights(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Attention probabilities ``(..., heads, T, T)``; padded keys get 0."""
        q, k = self._heads(self.q(x)), self._heads(self.k(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        key_mask = mask.unsqueeze(-2).unsqueeze(-3)
        scores = scores.masked_fill(~key_mask, float("-inf"))
        return torch.softmax(scores, dim=-1)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        attn = self.dropout(self.weights(x, mask))
        ctx = attn @ self._heads(self.v(x))
        *lead, h, T, hd = ctx.shape
        return self.out(ctx.transpose(-3, -2).reshape(*lead, T, h * hd))


class TransformerLayer(nn.Module):
    """Post-norm residual MHA followed by a two-layer feed-forward block."""

    def __init__(self, d: int, n_heads: int, ffn_dim: int, dropout: float = 0.0):
        super().__init__()
        self.attn = MultiHeadSelfAttention(d, n_heads, dropout)
        self.norm1 = nn.LayerNorm(d)
        self.ffn = nn.Sequential(nn.Linear(d, ffn_dim), nn.ReLU(), nn.Linear(ffn_dim, d))
        self.norm2 = nn.LayerNorm(d)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.attn(x, mask)))
        return self.norm2(x + self.dropout(self.ffn(x)))


class SequenceEncoder(nn.Module):
    """Stack of transformer layers; padded output rows are zeroed."""

    def __init__(self, d: int, n_layers: int = 1, n_heads: int = 2, ffn_dim: int | None = None,
                 dropout: float = 0.0):
        super().__init__()
        self.layers = nn.ModuleList(
            TransformerLayer(d, n_heads, ffn_dim or 2 * d, dropout) for _ in range(n_layers)
        )

    def forward(self, E: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        _check_mask(mask)
        m = mask.unsqueeze(-1).to(E.dtype)
        # zero pads so their content cannot leak through keys/values
        H = E * m
        for layer in self.layers:
            H = layer(H, mask) * m
        return H

    def attention_weights(self, E: torch.Tensor, mask: torch.Tensor, layer: int = 0) -> torch.Tensor:
        _check_mask(mask)
        m = mask.unsqueeze(-1).to(E.dtype)
        H = E * m
        for block in self.layers[:layer]:
            H = block(H, mask) * m
        return self.layers[layer].attn.weights(H, mask)


def attention_weights(encoder: SequenceEncoder, E: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return encoder.attention_weights(E, mask)


def encode(encoder: SequenceEncoder, E: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return encoder(E, mask)
