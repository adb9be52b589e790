"""The full grounding network: projections, anchor pooling, gated interaction,
and the highlight/moment prediction heads."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .anchors import build_anchor_pool
from .attention import ProjectionMLP
from .core import Batch
from .heads import CompositeEncoder, CompositeFuser, MomentDecoder, SaliencyHead
from .interaction import InteractionStack


@dataclass
class ModelOutput:
    saliency: torch.Tensor  # (B, L_v)
    pred_spans: torch.Tensor  # (B, M, 2) normalized (center, width)
    class_logits: torch.Tensor  # (B, M, 2), index 0 = foreground
    non_local_weights: torch.Tensor  # (B, L_v) final-layer gate values
    anchor_scores: torch.Tensor  # (B, L_v) raw anchor attention, pre min-max
    refined_video: torch.Tensor  # (B, L_v, d) final interaction output
    anchor: torch.Tensor  # (B, d) pooled text anchor
    enriched_anchor: torch.Tensor  # (B, d)
    final_layer_input: torch.Tensor  # (B, L_v, d) video features fed to the last interaction layer
    video_mask: torch.Tensor  # (B, L_v)

    @property
    def fg_prob(self) -> torch.Tensor:
        return torch.softmax(self.class_logits, dim=-1)[..., 0]


class GroundingModel(nn.Module):
    """Anchor-gated cross-modal network for joint moment retrieval and
    highlight detection over pre-extracted clip/token features."""

    def __init__(
        self,
        video_dim: int,
        text_dim: int,
        dim: int = 256,
        heads: int = 8,
        interaction_layers: int = 2,
        encoder_layers: int = 3,
        decoder_layers: int = 3,
        queries: int = 10,
        dropout: float = 0.1,
        anchor_method: str = "mean",
        local_gate: bool = True,
        nonlocal_gate: bool = True,
        saliency_vector_weights: bool = False,
        use_position: bool = True,
    ):
        super().__init__()
        self.dim = dim
        self.video_proj = ProjectionMLP(video_dim, dim, dropout)
        self.text_proj = ProjectionMLP(text_dim, dim, dropout)
        self.anchor_pool = build_anchor_pool(anchor_method, dim, heads)
        self.interaction = InteractionStack(
            dim,
            heads,
            interaction_layers,
            dropout,
            local_gate=local_gate,
            nonlocal_gate=nonlocal_gate,
            use_position=use_position,
        )
        self.fuser = CompositeFuser(dim, interaction_layers)
        self.encoder = CompositeEncoder(dim, heads, encoder_layers, dropout, use_position)
        self.saliency_head = SaliencyHead(dim, saliency_vector_weights)
        self.decoder = MomentDecoder(dim, heads, decoder_layers, queries, dropout, use_position)

    def forward(
        self,
        video: torch.Tensor,  # (B, L_v, d_v)
        video_mask: torch.Tensor,  # (B, L_v) bool
        text: torch.Tensor,  # (B, L_t, d_t)
        text_mask: torch.Tensor,  # (B, L_t) bool
    ) -> ModelOutput:
        fv = self.video_proj(video) * video_mask.unsqueeze(-1).to(video.dtype)
        ft = self.text_proj(text)
        anchor = self.anchor_pool(ft, text_mask)

        inter = self.interaction(fv, video_mask, ft, text_mask, anchor)
        composite = self.fuser(fv, inter.intermediates, inter.enriched_anchor)
        video_tokens, anchor_token = self.encoder(composite, video_mask)
        saliency = self.saliency_head(video_tokens, anchor_token)
        spans, class_logits = self.decoder(video_tokens, video_mask)

        return ModelOutput(
            saliency=saliency,
            pred_spans=spans,
            class_logits=class_logits,
            non_local_weights=inter.non_local_weights,
            anchor_scores=inter.anchor_scores,
            refined_video=inter.refined_video,
            anchor=anchor,
            enriched_anchor=inter.enriched_anchor,
            final_layer_input=inter.final_layer_input,
            video_mask=video_mask,
        )

    def forward_batch(self, batch: Batch) -> ModelOutput:
        return self(batch.video, batch.video_mask, batch.text, batch.text_mask)

    def anchor_video_table(self, output: ModelOutput) -> torch.Tensor:
        """All-pairs enriched anchors for the clip-consistency loss, (B, B, d)."""
        return self.interaction.anchor_video_table(
            output.anchor, output.final_layer_input, output.video_mask
        )
