"""Prediction heads: composite fusion, encoder, saliency scoring, and moment decoding."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .attention import (
    MLP,
    FeedForward,
    MultiHeadAttention,
    sinusoidal_encoding,
    sinusoidal_span_embedding,
)
from .core import MomentPredictionSet, spans_cw_to_se
from .metrics import iou_1d


class CompositeFuser(nn.Module):
    """Project the channel-concat of the stack input and every layer output to d,
    then append the enriched anchor as one extra temporal position."""

    def __init__(self, dim: int, interaction_layers: int):
        super().__init__()
        self.proj = nn.Linear(dim * (interaction_layers + 1), dim)

    def forward(
        self,
        video_in: torch.Tensor,  # (B, L_v, d) stack input features
        intermediates: list[torch.Tensor],  # N x (B, L_v, d)
        enriched_anchor: torch.Tensor,  # (B, d)
    ) -> torch.Tensor:
        fused = self.proj(torch.cat([video_in] + intermediates, dim=-1))  # (B, L_v, d)
        return torch.cat([fused, enriched_anchor.unsqueeze(1)], dim=1)  # (B, L_v+1, d)


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float = 0.1):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, 4 * dim, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor, pos: torch.Tensor) -> torch.Tensor:
        q = x + pos
        x = self.norm1(x + self.dropout(self.attn(q, q, x, mask)))
        return self.norm2(x + self.dropout(self.ffn(x)))


class CompositeEncoder(nn.Module):
    """Self-attention encoder over [video tokens; anchor token].

    The anchor is always the last position. Sinusoidal positions are injected
    into the attention queries/keys at every layer (the anchor token carries
    no position). After the encoder, video tokens and the anchor pass through
    separate projection MLPs; the projected outputs feed the saliency head
    and the moment decoder.
    """

    def __init__(self, dim: int, heads: int, layers: int = 3, dropout: float = 0.1, use_position: bool = True):
        super().__init__()
        self.dim = dim
        self.use_position = use_position
        self.layers = nn.ModuleList(EncoderLayer(dim, heads, dropout) for _ in range(layers))
        self.video_proj = MLP(dim, dim, dim, 2)
        self.anchor_proj = MLP(dim, dim, dim, 2)

    def forward(
        self,
        composite: torch.Tensor,  # (B, L_v+1, d), anchor last
        video_mask: torch.Tensor,  # (B, L_v)
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (video tokens (B, L_v, d), anchor token (B, d))."""
        b, l_plus_1, _ = composite.shape
        pos = composite.new_zeros(1, l_plus_1, self.dim)
        if self.use_position:
            pe = sinusoidal_encoding(l_plus_1 - 1, self.dim, dtype=composite.dtype)
            pos[0, :-1] = pe.to(composite.device)
        mask = torch.cat([video_mask, video_mask.new_ones(b, 1)], dim=1)
        x = composite
        for layer in self.layers:
            x = layer(x, mask, pos)
        video_tokens = self.video_proj(x[:, :-1])
        anchor_token = self.anchor_proj(x[:, -1])
        return video_tokens, anchor_token


class SaliencyHead(nn.Module):
    """Score each clip by a scaled product between the modulated anchor and clip.

    Default reading uses d x d linear maps on both sides; vector_weights=True
    switches to the literal element-wise vector form.
    """

    def __init__(self, dim: int, vector_weights: bool = False):
        super().__init__()
        self.dim = dim
        self.vector_weights = vector_weights
        if vector_weights:
            self.w_s = nn.Parameter(torch.ones(dim))
            self.w_v = nn.Parameter(torch.ones(dim))
        else:
            self.w_s = nn.Linear(dim, dim)
            self.w_v = nn.Linear(dim, dim)

    def forward(self, video_tokens: torch.Tensor, anchor_token: torch.Tensor) -> torch.Tensor:
        """(B, L_v, d), (B, d) -> per-clip scores (B, L_v)."""
        if self.vector_weights:
            mod_anchor = self.w_s.to(anchor_token.dtype) * anchor_token
            mod_video = self.w_v.to(video_tokens.dtype) * video_tokens
        else:
            mod_anchor = self.w_s(anchor_token)
            mod_video = self.w_v(video_tokens)
        return torch.einsum("bld,bd->bl", mod_video, mod_anchor) / self.dim


def inverse_sigmoid(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    x = x.clamp(eps, 1 - eps)
    return torch.log(x / (1 - x))


class DecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float = 0.1):
        super().__init__()
        self.self_attn = MultiHeadAttention(dim, heads, dropout)
        self.cross_attn = MultiHeadAttention(dim, heads, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.norm3 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, 4 * dim, dropout)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self,
        queries: torch.Tensor,  # (B, M, d)
        query_pos: torch.Tensor,  # (B, M, d)
        memory: torch.Tensor,  # (B, L_v, d)
        memory_mask: torch.Tensor,  # (B, L_v)
        memory_pos: torch.Tensor,  # (B or 1, L_v, d); zeros when positions are disabled
    ) -> torch.Tensor:
        q = queries + query_pos
        all_valid = memory_mask.new_ones(queries.shape[:2])
        queries = self.norm1(queries + self.dropout(self.self_attn(q, q, queries, all_valid)))
        q = queries + query_pos
        queries = self.norm2(
            queries + self.dropout(self.cross_attn(q, memory + memory_pos, memory, memory_mask))
        )
        return self.norm3(queries + self.dropout(self.ffn(queries)))


class MomentDecoder(nn.Module):
    """Decode M moment predictions from learnable dynamic anchor boxes.

    Each query carries a (center, width) logit pair that every decoder layer
    refines additively; the final sigmoid reads out the span, and a linear
    head classifies foreground vs background.
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        layers: int = 3,
        queries: int = 10,
        dropout: float = 0.1,
        use_position: bool = True,
    ):
        super().__init__()
        self.dim = dim
        self.num_queries = queries
        self.use_position = use_position
        self.content = nn.Embedding(queries, dim)
        # Spread initial anchors across the video with a moderate width.
        centers = torch.linspace(0.1, 0.9, queries)
        widths = torch.full((queries,), 0.25)
        self.span_logits = nn.Parameter(inverse_sigmoid(torch.stack([centers, widths], dim=-1)))
        self.pos_mlp = MLP(dim, dim, dim, 2)
        self.layers = nn.ModuleList(DecoderLayer(dim, heads, dropout) for _ in range(layers))
        self.span_head = MLP(dim, dim, 2, 3)
        self.class_head = nn.Linear(dim, 2)  # index 0 = foreground, 1 = background

    def forward(
        self,
        memory: torch.Tensor,  # (B, L_v, d) encoded video tokens, anchor excluded
        memory_mask: torch.Tensor,  # (B, L_v)
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (spans (B, M, 2) as sigmoid (center, width), class logits (B, M, 2))."""
        b = memory.shape[0]
        content = self.content.weight.to(memory.dtype).unsqueeze(0).expand(b, -1, -1)
        logits = self.span_logits.to(memory.dtype).unsqueeze(0).expand(b, -1, -1)
        if self.use_position:
            memory_pos = (
                sinusoidal_encoding(memory.shape[1], self.dim, dtype=memory.dtype)
                .to(memory.device)
                .unsqueeze(0)
            )
        else:
            memory_pos = memory.new_zeros(1, memory.shape[1], self.dim)
        for layer in self.layers:
            query_pos = self.pos_mlp(sinusoidal_span_embedding(torch.sigmoid(logits), self.dim))
            content = layer(content, query_pos, memory, memory_mask, memory_pos)
            logits = logits + self.span_head(content)
        spans = torch.sigmoid(logits)
        class_logits = self.class_head(content)
        return spans, class_logits


def nms_1d(spans: torch.Tensor, scores: torch.Tensor, iou_threshold: float) -> list[int]:
    """Greedy 1-D NMS on (start, end) spans; returns surviving indices in score order.

    A span is suppressed when its IoU with an already-kept span exceeds the
    threshold. Ties in score keep the lower index first.
    """
    order = sorted(range(len(scores)), key=lambda i: (-float(scores[i]), i))
    keep: list[int] = []
    for i in order:
        a = (float(spans[i, 0]), float(spans[i, 1]))
        if all(iou_1d(a, (float(spans[j, 0]), float(spans[j, 1]))) <= iou_threshold for j in keep):
            keep.append(i)
    return keep


@dataclass
class RankedPrediction:
    span: tuple[float, float]  # normalized (start, end)
    score: float
    query_index: int


def rank_predictions(
    preds: MomentPredictionSet,
    top_k: int | None = None,
    use_nms: bool = False,
    nms_iou: float = 0.7,
) -> list[RankedPrediction]:
    """Order predictions by foreground probability (ties: lower query index first)."""
    spans_se = spans_cw_to_se(preds.spans)
    scores = preds.fg_prob
    if use_nms:
        indices = nms_1d(spans_se, scores, nms_iou)
    else:
        indices = sorted(range(len(preds)), key=lambda i: (-float(scores[i]), i))
    if top_k is not None:
        indices = indices[: min(top_k, len(indices))]
    return [
        RankedPrediction(
            span=(float(spans_se[i, 0]), float(spans_se[i, 1])),
            score=float(scores[i]),
            query_index=i,
        )
        for i in indices
    ]
