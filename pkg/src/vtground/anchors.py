"""Global text anchor generation: pool token-level text features into one d-vector.

Four variants are provided; mean pooling is the default. All of them ignore
masked (padding) tokens, so appending padding never changes the anchor.
"""

from __future__ import annotations

import torch
from torch import nn

from .attention import FeedForward, MultiHeadAttention, masked_mean, masked_softmax

ANCHOR_METHODS = ("mean", "max", "weighted", "transformer")


def _check_text(text: torch.Tensor, mask: torch.Tensor) -> None:
    if text.ndim != 3:
        raise ValueError(f"text features must be (B, L_t, d), got {tuple(text.shape)}")
    if not bool(mask.any(dim=1).all()):
        raise ValueError("every sample needs at least one valid token")


class MeanPool(nn.Module):
    """Mean of token embeddings over valid positions."""

    def forward(self, text: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        _check_text(text, mask)
        return masked_mean(text, mask)


class MaxPool(nn.Module):
    """Channel-wise max over valid positions."""

    def forward(self, text: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        _check_text(text, mask)
        neg_inf = torch.finfo(text.dtype).min
        filled = text.masked_fill(~mask.unsqueeze(-1), neg_inf)
        return filled.max(dim=1).values


class WeightedPool(nn.Module):
    """Learned single-query attention pool.

    A learned score vector dots each token; the softmax over valid tokens
    gives convex weights, so the anchor stays inside the token hull.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.score = nn.Parameter(torch.zeros(dim))
        nn.init.normal_(self.score, std=dim**-0.5)

    def forward(self, text: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        _check_text(text, mask)
        logits = torch.matmul(text, self.score.to(text.dtype))  # (B, L_t)
        weights = masked_softmax(logits, mask)
        return torch.einsum("bl,bld->bd", weights, text)


class TransformerPool(nn.Module):
    """One self-attention + feedforward layer over [anchor token; tokens].

    The anchor position's output is the pooled vector. No positional
    encoding is applied, so the result is invariant to token order.
    """

    def __init__(self, dim: int, heads: int = 8, dropout: float = 0.0):
        super().__init__()
        self.anchor_token = nn.Parameter(torch.zeros(dim))
        nn.init.normal_(self.anchor_token, std=dim**-0.5)
        self.attn = MultiHeadAttention(dim, heads, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, 4 * dim, dropout)
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, text: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        _check_text(text, mask)
        b = text.shape[0]
        anchor = self.anchor_token.to(text.dtype).expand(b, 1, -1)
        seq = torch.cat([anchor, text], dim=1)  # (B, 1+L_t, d)
        seq_mask = torch.cat([mask.new_ones(b, 1), mask], dim=1)
        out = self.norm1(seq + self.attn(seq, seq, seq, seq_mask))
        out = self.norm2(out + self.ffn(out))
        return out[:, 0]


def build_anchor_pool(method: str, dim: int, heads: int = 8) -> nn.Module:
    """Factory for the anchor pooling module selected by config/CLI."""
    if method == "mean":
        return MeanPool()
    if method == "max":
        return MaxPool()
    if method == "weighted":
        return WeightedPool(dim)
    if method == "transformer":
        return TransformerPool(dim, heads)
    raise ValueError(f"unknown anchor method {method!r}; expected one of {ANCHOR_METHODS}")
