"""Shared attention machinery: masked softmax, multi-head attention, positional encodings."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

MASK_FILL = float("-inf")


def masked_softmax(logits: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
    """Softmax over the last dim with masked keys receiving exactly zero weight.

    key_mask broadcasts against logits; True = valid. Every row must have at
    least one valid key.
    """
    if not bool(key_mask.any(dim=-1).all()):
        raise ValueError("attention requires at least one valid key per row")
    logits = logits.masked_fill(~key_mask, MASK_FILL)
    attn = torch.softmax(logits, dim=-1)
    # -inf logits already give exact zeros; keep an explicit zero-fill so the
    # contract survives any future logits dtype edge case.
    return attn.masked_fill(~key_mask, 0.0)


def masked_mean(x: torch.Tensor, mask: torch.Tensor, dim: int = 1) -> torch.Tensor:
    """Mean over `dim` counting only mask-True positions."""
    mask_f = mask.to(x.dtype).unsqueeze(-1)
    total = (x * mask_f).sum(dim=dim)
    count = mask_f.sum(dim=dim).clamp(min=1.0)
    return total / count


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    """(B, L, d) -> (B, H, L, d/H)."""
    b, l, d = x.shape
    return x.view(b, l, heads, d // heads).transpose(1, 2)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    """(B, H, L, d/H) -> (B, L, d)."""
    b, h, l, dh = x.shape
    return x.transpose(1, 2).reshape(b, l, h * dh)


class MultiHeadAttention(nn.Module):
    """Multi-head attention with explicit key masking and exposed weights."""

    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"head count {heads} must divide dim {dim}")
        self.dim = dim
        self.heads = heads
        self.w_q = nn.Linear(dim, dim)
        self.w_k = nn.Linear(dim, dim)
        self.w_v = nn.Linear(dim, dim)
        self.w_out = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self,
        query: torch.Tensor,  # (B, L_q, d)
        key: torch.Tensor,  # (B, L_k, d)
        value: torch.Tensor,  # (B, L_k, d)
        key_mask: torch.Tensor,  # (B, L_k) bool
        return_weights: bool = False,
    ):
        q = split_heads(self.w_q(query), self.heads)
        k = split_heads(self.w_k(key), self.heads)
        v = split_heads(self.w_v(value), self.heads)
        scale = 1.0 / math.sqrt(q.shape[-1])
        logits = torch.matmul(q, k.transpose(-2, -1)) * scale  # (B, H, L_q, L_k)
        attn = masked_softmax(logits, key_mask[:, None, None, :])
        out = self.w_out(merge_heads(torch.matmul(self.dropout(attn), v)))
        if return_weights:
            return out, attn
        return out


class FeedForward(nn.Module):
    """Position-wise feedforward: Linear(d, hidden) -> ReLU -> dropout -> Linear(hidden, d)."""

    def __init__(self, dim: int, hidden: int, dropout: float = 0.0):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def sinusoidal_encoding(length: int, dim: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Fixed sinusoidal positional encoding table of shape (length, dim)."""
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    half = torch.arange(0, dim, 2, dtype=torch.float64)
    div = torch.exp(-math.log(10000.0) * half / dim)
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div[: dim // 2])
    return table.to(dtype)


def sinusoidal_span_embedding(spans: torch.Tensor, dim: int) -> torch.Tensor:
    """Embed normalized (center, width) pairs into `dim` dims, half per coordinate.

    spans: (..., 2) in [0, 1]. Uses the same frequency ladder as
    sinusoidal_encoding with positions scaled to a nominal range of 100.
    """
    if dim % 4 != 0:
        raise ValueError(f"span embedding needs dim divisible by 4, got {dim}")
    half_dim = dim // 2
    half = torch.arange(0, half_dim, 2, dtype=torch.float64, device=spans.device)
    div = torch.exp(-math.log(10000.0) * half / half_dim)
    pos = spans.double().unsqueeze(-1) * 100.0 * div  # (..., 2, half_dim/2)
    emb = torch.cat([torch.sin(pos), torch.cos(pos)], dim=-1)  # (..., 2, half_dim)
    return emb.reshape(*spans.shape[:-1], 2 * half_dim).to(spans.dtype)


class ProjectionMLP(nn.Module):
    """Input projection into the shared embedding space: LayerNorm(Linear(dropout(x)))."""

    def __init__(self, in_dim: int, out_dim: int, dropout: float = 0.1, layers: int = 2):
        super().__init__()
        blocks = []
        d = in_dim
        for i in range(layers):
            blocks += [nn.Dropout(dropout), nn.Linear(d, out_dim), nn.LayerNorm(out_dim)]
            if i < layers - 1:
                blocks.append(nn.ReLU())
            d = out_dim
        self.net = nn.Sequential(*blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class MLP(nn.Module):
    """Plain multi-layer perceptron with ReLU between layers."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, layers: int):
        super().__init__()
        dims = [in_dim] + [hidden] * (layers - 1) + [out_dim]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x
