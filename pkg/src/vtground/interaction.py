"""Cross-modal interaction: gated cross-attention layers plus anchor-query attention.

Each layer attends video clips over text tokens, then modulates the attended
features with two gates derived from the global text anchor:

  * a local gate: per-frame, per-channel sigmoid of projected query/global-key
    products, strictly inside (0, 1);
  * a non-local gate: per-frame scalar in [0, 1] from min-max-normalized
    anchor-to-video attention scores.

The anchor-to-video attention is computed once per layer; its per-head
weights produce the visually enriched anchor and their head-average is the
raw score vector that the non-local gate normalizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .attention import (
    FeedForward,
    masked_mean,
    masked_softmax,
    merge_heads,
    sinusoidal_encoding,
    split_heads,
)


def min_max_normalize(scores: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Min-max normalize per sample over valid positions.

    Returns exact 0 at the minimum and exact 1 at the maximum. The degenerate
    all-equal case maps to all-ones (no suppression) rather than dividing by
    zero. Masked positions come back as 0.
    """
    big = torch.finfo(scores.dtype).max
    lo = scores.masked_fill(~mask, big).min(dim=-1, keepdim=True).values
    hi = scores.masked_fill(~mask, -big).max(dim=-1, keepdim=True).values
    span = hi - lo
    flat = span <= 0
    normed = (scores - lo) / torch.where(flat, torch.ones_like(span), span)
    normed = torch.where(flat.expand_as(normed), torch.ones_like(normed), normed)
    return normed.masked_fill(~mask, 0.0)


@dataclass
class LayerOutput:
    video: torch.Tensor  # (B, L_v, d) refined clip features
    enriched_anchor: torch.Tensor  # (B, d)
    non_local_weights: torch.Tensor  # (B, L_v) in [0, 1]
    anchor_scores: torch.Tensor  # (B, L_v) raw head-averaged attention, pre min-max
    local_gate: torch.Tensor  # (B, L_v, d) in (0, 1)


@dataclass
class InteractionOutput:
    refined_video: torch.Tensor  # (B, L_v, d) final-layer output
    intermediates: list[torch.Tensor]  # one (B, L_v, d) entry per layer
    enriched_anchor: torch.Tensor  # (B, d) final layer
    non_local_weights: torch.Tensor  # (B, L_v) final layer
    anchor_scores: torch.Tensor  # (B, L_v) final layer, pre min-max
    final_layer_input: torch.Tensor  # (B, L_v, d) video features fed to the last layer


class GatedCrossAttentionLayer(nn.Module):
    """One gated cross-attention layer with post-norm transformer scaffolding.

    The query projection is shared between the video-over-text attention and
    the anchor-over-video attention (where it projects the keys); the key
    projection likewise projects the anchor query. This reuse is deliberate:
    both attentions measure the same video-text geometry.
    """

    def __init__(
        self,
        dim: int,
        heads: int = 8,
        dropout: float = 0.1,
        local_gate: bool = True,
        nonlocal_gate: bool = True,
    ):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"head count {heads} must divide dim {dim}")
        self.dim = dim
        self.heads = heads
        self.use_local_gate = local_gate
        self.use_nonlocal_gate = nonlocal_gate
        self.w_q = nn.Linear(dim, dim)
        self.w_k = nn.Linear(dim, dim)
        self.w_v = nn.Linear(dim, dim)
        self.w_v_anchor = nn.Linear(dim, dim)
        # Gate projections are pure matrices so a zero input gives exactly
        # sigmoid(0) = 0.5 regardless of initialization.
        self.w_q_gate = nn.Linear(dim, dim, bias=False)
        self.w_k_gate = nn.Linear(dim, dim, bias=False)
        self.dropout = nn.Dropout(dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, 4 * dim, dropout)
        self.norm2 = nn.LayerNorm(dim)

    def cross_attention(
        self,
        video: torch.Tensor,  # (B, L_v, d)
        text: torch.Tensor,  # (B, L_t, d)
        text_mask: torch.Tensor,  # (B, L_t) bool
        return_weights: bool = False,
    ):
        """Video-as-query attention over text tokens (no output projection)."""
        q = split_heads(self.w_q(video), self.heads)
        k = split_heads(self.w_k(text), self.heads)
        v = split_heads(self.w_v(text), self.heads)
        logits = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(q.shape[-1])
        attn = masked_softmax(logits, text_mask[:, None, None, :])  # (B, H, L_v, L_t)
        out = merge_heads(torch.matmul(attn, v))
        if return_weights:
            return out, attn
        return out

    def local_gate(self, q: torch.Tensor, k_global: torch.Tensor) -> torch.Tensor:
        """Per-frame, per-channel gate in (0, 1).

        q: (B, L_v, d) projected video queries; k_global: (B, d) mean of the
        projected text keys over valid tokens.
        """
        return torch.sigmoid(self.w_q_gate(q) * self.w_k_gate(k_global).unsqueeze(1))

    def anchor_attention(
        self,
        anchor: torch.Tensor,  # (B, d)
        video: torch.Tensor,  # (B, L_v, d)
        video_mask: torch.Tensor,  # (B, L_v) bool
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Anchor-as-query attention over video clips.

        Returns (enriched_anchor (B, d), raw_scores (B, L_v), per-head
        weights (B, H, L_v)). raw_scores is the head-average of the weights;
        the non-local gate is its min-max normalization, so gate and anchor
        share one attention computation.
        """
        q_a = split_heads(self.w_k(anchor).unsqueeze(1), self.heads)  # (B, H, 1, d/H)
        k_a = split_heads(self.w_q(video), self.heads)
        v_a = split_heads(self.w_v_anchor(video), self.heads)
        logits = torch.matmul(q_a, k_a.transpose(-2, -1)) / math.sqrt(q_a.shape[-1])
        attn = masked_softmax(logits, video_mask[:, None, None, :])  # (B, H, 1, L_v)
        enriched = merge_heads(torch.matmul(attn, v_a)).squeeze(1)  # (B, d)
        weights = attn.squeeze(2)  # (B, H, L_v)
        raw = weights.mean(dim=1)  # (B, L_v)
        return enriched, raw, weights

    def forward(
        self,
        video: torch.Tensor,
        video_mask: torch.Tensor,
        text: torch.Tensor,
        text_mask: torch.Tensor,
        anchor: torch.Tensor,
    ) -> LayerOutput:
        q = self.w_q(video)
        k = self.w_k(text)
        v = self.w_v(text)
        q_h = split_heads(q, self.heads)
        logits = torch.matmul(q_h, split_heads(k, self.heads).transpose(-2, -1))
        logits = logits / math.sqrt(q_h.shape[-1])
        attn = masked_softmax(logits, text_mask[:, None, None, :])
        attended = merge_heads(torch.matmul(attn, split_heads(v, self.heads)))  # F_v'

        k_global = masked_mean(k, text_mask)  # (B, d)
        g_l = self.local_gate(q, k_global)

        enriched_anchor, raw, _ = self.anchor_attention(anchor, video, video_mask)
        g_n = min_max_normalize(raw, video_mask)

        gated = attended
        if self.use_local_gate:
            gated = g_l * gated
        if self.use_nonlocal_gate:
            gated = g_n.unsqueeze(-1) * gated

        out = self.norm1(video + self.dropout(gated))
        out = self.norm2(out + self.dropout(self.ffn(out)))
        out = out * video_mask.unsqueeze(-1).to(out.dtype)
        return LayerOutput(
            video=out,
            enriched_anchor=enriched_anchor,
            non_local_weights=g_n,
            anchor_scores=raw,
            local_gate=g_l,
        )


class InteractionStack(nn.Module):
    """A stack of gated cross-attention layers over a shared text anchor.

    Fixed sinusoidal positions are added to the video clips at the stack
    input (none to text); set use_position=False for order-equivariant use.
    """

    def __init__(
        self,
        dim: int,
        heads: int = 8,
        layers: int = 2,
        dropout: float = 0.1,
        local_gate: bool = True,
        nonlocal_gate: bool = True,
        use_position: bool = True,
    ):
        super().__init__()
        if layers < 1:
            raise ValueError("interaction stack needs at least one layer")
        self.dim = dim
        self.use_position = use_position
        self.layers = nn.ModuleList(
            GatedCrossAttentionLayer(dim, heads, dropout, local_gate, nonlocal_gate)
            for _ in range(layers)
        )

    def forward(
        self,
        video: torch.Tensor,
        video_mask: torch.Tensor,
        text: torch.Tensor,
        text_mask: torch.Tensor,
        anchor: torch.Tensor,
    ) -> InteractionOutput:
        if self.use_position:
            pe = sinusoidal_encoding(video.shape[1], self.dim, dtype=video.dtype)
            video = video + pe.to(video.device)
        current = video
        intermediates: list[torch.Tensor] = []
        final_input = current
        out: LayerOutput | None = None
        for layer in self.layers:
            final_input = current
            out = layer(current, video_mask, text, text_mask, anchor)
            intermediates.append(out.video)
            current = out.video
        assert out is not None
        return InteractionOutput(
            refined_video=current,
            intermediates=intermediates,
            enriched_anchor=out.enriched_anchor,
            non_local_weights=out.non_local_weights,
            anchor_scores=out.anchor_scores,
            final_layer_input=final_input,
        )

    def anchor_video_table(
        self,
        anchors: torch.Tensor,  # (B, d)
        videos: torch.Tensor,  # (B, L_v, d)
        video_mask: torch.Tensor,  # (B, L_v)
    ) -> torch.Tensor:
        """All-pairs enriched anchors t[i, j] = psi(anchor_i, video_j), (B, B, d).

        Uses the final layer's anchor-attention parameters; videos should be
        the features that fed that layer.
        """
        b = anchors.shape[0]
        anc = anchors.unsqueeze(1).expand(b, b, -1).reshape(b * b, -1)
        vid = videos.unsqueeze(0).expand(b, -1, -1, -1).reshape(b * b, *videos.shape[1:])
        mask = video_mask.unsqueeze(0).expand(b, -1, -1).reshape(b * b, -1)
        enriched, _, _ = self.layers[-1].anchor_attention(anc, vid, mask)
        return enriched.reshape(b, b, -1)
