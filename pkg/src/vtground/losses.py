"""Training objectives: alignment, highlight, and set-prediction moment losses.

All losses are pure functions of tensors (plus explicit sampled indices where
a loss is defined through sampling), so they are deterministic given their
inputs and straightforward to check against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

from .core import LABEL_PAD, spans_cw_to_se


@dataclass
class LossWeights:
    """Balancing weights; the margin and temperature ride along for convenience."""

    l1: float = 10.0
    iou: float = 1.0
    cls: float = 4.0
    clip: float = 1.0
    frame: float = 1.0
    margin_delta: float = 0.2
    rank_tau: float = 0.5


@dataclass
class MatchResult:
    """Injective assignment of each GT moment to one prediction index."""

    gt_indices: np.ndarray
    pred_indices: np.ndarray

    def as_dict(self) -> dict[int, int]:
        return {int(g): int(p) for g, p in zip(self.gt_indices, self.pred_indices)}


def clip_consistency_loss(anchors: torch.Tensor, cross_table: torch.Tensor) -> torch.Tensor:
    """Symmetric InfoNCE tying each text anchor to its own video's enriched anchor.

    anchors: (B, d) pooled text anchors t_i. cross_table: (B, B, d) where
    entry [i, j] is the enriched anchor produced from text i attended over
    video j. Both normalization directions are averaged by 1/B; the B=1 case
    is exactly zero.
    """
    if anchors.ndim != 2 or cross_table.ndim != 3:
        raise ValueError("expected anchors (B, d) and cross_table (B, B, d)")
    b = anchors.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    sim_rows = torch.einsum("ijd,id->ij", cross_table, anchors)  # fixed anchor i across videos j
    sim_cols = torch.einsum("ijd,jd->ij", cross_table, anchors)  # fixed video j across anchors i
    diag = torch.arange(b, device=anchors.device)
    row_term = -(sim_rows[diag, diag] - torch.logsumexp(sim_rows, dim=1)).mean()
    col_term = -(sim_cols[diag, diag] - torch.logsumexp(sim_cols, dim=0)).mean()
    return row_term + col_term


def frame_relevance_loss(
    refined_video: torch.Tensor,  # (B, L_v, d) gated-attention output
    anchor: torch.Tensor,  # (B, d) pooled text anchor (pre-enrichment)
    relevance: torch.Tensor,  # (B, L_v) in {0, 1}, LABEL_PAD on padding
    video_mask: torch.Tensor,  # (B, L_v)
) -> torch.Tensor:
    """Binary cross-entropy between sigmoid clip-anchor similarity and the
    in-moment indicators, averaged over valid clips."""
    logits = torch.einsum("bld,bd->bl", refined_video, anchor)
    valid = video_mask & (relevance != LABEL_PAD)
    if not bool(valid.any()):
        raise ValueError("frame relevance loss needs at least one labeled clip")
    return F.binary_cross_entropy_with_logits(
        logits[valid], relevance[valid].to(logits.dtype)
    )


def sample_margin_indices(
    relevance: torch.Tensor,  # (B, L_v) in {0, 1}, LABEL_PAD on padding
    video_mask: torch.Tensor,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Draw one in-moment and one out-of-moment clip index per sample.

    Returns (t_in, t_out), each (B,) with -1 marking samples where that side
    has no eligible clip.
    """
    b = relevance.shape[0]
    t_in = torch.full((b,), -1, dtype=torch.long)
    t_out = torch.full((b,), -1, dtype=torch.long)
    for i in range(b):
        inside = torch.nonzero((relevance[i] == 1) & video_mask[i], as_tuple=False).flatten()
        outside = torch.nonzero((relevance[i] == 0) & video_mask[i], as_tuple=False).flatten()
        if len(inside) > 0:
            pick = int(torch.randint(len(inside), (1,), generator=generator))
            t_in[i] = inside[pick]
        if len(outside) > 0:
            pick = int(torch.randint(len(outside), (1,), generator=generator))
            t_out[i] = outside[pick]
    return t_in, t_out


def margin_loss(
    scores: torch.Tensor,  # (B, L_v) predicted saliency
    relevance: torch.Tensor,  # (B, L_v)
    video_mask: torch.Tensor,
    delta: float,
    t_in: torch.Tensor,  # (B,) sampled in-moment clip, -1 = unavailable
    t_out: torch.Tensor,  # (B,) sampled out-of-moment clip, -1 = unavailable
) -> torch.Tensor:
    """Hinge margins between high/low scores inside GT moments and across the
    moment boundary. Degenerate sides (no eligible clip) drop out."""
    b = scores.shape[0]
    terms = []
    neg_inf = torch.finfo(scores.dtype).min
    for i in range(b):
        inside = (relevance[i] == 1) & video_mask[i]
        sample_terms = []
        if bool(inside.any()):
            s_in = scores[i].masked_fill(~inside, neg_inf)
            t_high = int(s_in.argmax())
            s_in_min = scores[i].masked_fill(~inside, -neg_inf)
            t_low = int(s_in_min.argmin())
            sample_terms.append(torch.relu(delta + scores[i, t_low] - scores[i, t_high]))
        if int(t_in[i]) >= 0 and int(t_out[i]) >= 0:
            sample_terms.append(torch.relu(delta + scores[i, t_out[i]] - scores[i, t_in[i]]))
        if sample_terms:
            terms.append(sum(sample_terms))
    if not terms:
        return scores.new_zeros(())
    return torch.stack(terms).mean()


def rank_contrastive_loss(
    scores: torch.Tensor,  # (B, L_v)
    labels: torch.Tensor,  # (B, L_v) saliency levels (0..4) or binary relevance
    video_mask: torch.Tensor,
    tau: float,
    max_level: int = 4,
) -> torch.Tensor:
    """Temperature-scaled contrastive loss over rank groups.

    One group per occupied label threshold: clips with label >= level are the
    positives, the rest of the valid clips are the negatives. Groups with no
    positive clip are skipped; samples with no group drop out of the mean.
    """
    b = scores.shape[0]
    neg_inf = torch.finfo(scores.dtype).min
    logits = (scores / tau).masked_fill(~video_mask, neg_inf)
    per_sample = []
    for i in range(b):
        if not bool(video_mask[i].any()):
            continue
        all_lse = torch.logsumexp(logits[i], dim=0)
        groups = []
        for level in range(1, max_level + 1):
            pos = (labels[i] >= level) & video_mask[i]
            if not bool(pos.any()):
                continue
            pos_lse = torch.logsumexp(logits[i].masked_fill(~pos, neg_inf), dim=0)
            groups.append(all_lse - pos_lse)
        if groups:
            per_sample.append(sum(groups))
    if not per_sample:
        return scores.new_zeros(())
    return torch.stack(per_sample).mean()


def giou_1d(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Generalized IoU for (center, width) span pairs, elementwise over (..., 2).

    Equals plain IoU when the hull equals the union; bounded in (-1, 1].
    """
    sa, sb = spans_cw_to_se(a), spans_cw_to_se(b)
    inter = (torch.minimum(sa[..., 1], sb[..., 1]) - torch.maximum(sa[..., 0], sb[..., 0])).clamp(min=0)
    len_a = sa[..., 1] - sa[..., 0]
    len_b = sb[..., 1] - sb[..., 0]
    union = len_a + len_b - inter
    hull = torch.maximum(sa[..., 1], sb[..., 1]) - torch.minimum(sa[..., 0], sb[..., 0])
    # Point intervals: identical points have IoU 1, otherwise 0 with the full
    # hull penalty; avoid 0/0 while keeping gradients clean elsewhere.
    eps = torch.finfo(a.dtype).tiny
    iou = torch.where(union > 0, inter / union.clamp(min=eps), torch.zeros_like(union))
    giou = torch.where(
        hull > 0,
        iou - (hull - union) / hull.clamp(min=eps),
        torch.ones_like(hull),
    )
    return giou


def span_loss(gt: torch.Tensor, pred: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    """Weighted L1 + generalized-IoU loss per matched (center, width) pair, (...,)."""
    l1 = (gt - pred).abs().sum(dim=-1)
    return weights.l1 * l1 + weights.iou * (1.0 - giou_1d(gt, pred))


def hungarian_match(
    gt_spans: torch.Tensor,  # (n, 2) cw
    pred_spans: torch.Tensor,  # (M, 2) cw
    fg_prob: torch.Tensor,  # (M,)
    weights: LossWeights,
) -> MatchResult:
    """Minimum-cost injective assignment of GT moments to predictions.

    Cost per pair: -cls_weight * fg_prob + l1_weight * L1 + iou_weight * (1 - gIoU),
    mirroring the loss weights with the probability (not its log) in the
    classification term.
    """
    n, m = gt_spans.shape[0], pred_spans.shape[0]
    if n > m:
        raise ValueError(f"cannot match {n} GT moments to {m} predictions")
    with torch.no_grad():
        gt = gt_spans.unsqueeze(1).expand(n, m, 2)
        pr = pred_spans.unsqueeze(0).expand(n, m, 2)
        cost = (
            -weights.cls * fg_prob.unsqueeze(0)
            + weights.l1 * (gt - pr).abs().sum(dim=-1)
            + weights.iou * (1.0 - giou_1d(gt, pr))
        )
        rows, cols = linear_sum_assignment(cost.cpu().double().numpy())
    return MatchResult(gt_indices=rows, pred_indices=cols)


FOREGROUND, BACKGROUND = 0, 1


def moment_retrieval_loss(
    gt_spans: list[torch.Tensor],  # per sample (n_i, 2) cw
    pred_spans: torch.Tensor,  # (B, M, 2) cw
    class_logits: torch.Tensor,  # (B, M, 2)
    weights: LossWeights,
) -> torch.Tensor:
    """Set-prediction loss: classification over all queries plus span loss on
    Hungarian-matched pairs, summed per sample and averaged over the batch."""
    b, m, _ = pred_spans.shape
    log_probs = F.log_softmax(class_logits, dim=-1)
    fg_prob = log_probs[..., FOREGROUND].exp()
    total = pred_spans.new_zeros(())
    for i in range(b):
        targets = torch.full((m,), BACKGROUND, dtype=torch.long, device=pred_spans.device)
        sample = pred_spans.new_zeros(())
        if gt_spans[i].shape[0] > 0:
            match = hungarian_match(gt_spans[i], pred_spans[i], fg_prob[i], weights)
            gt_idx = torch.as_tensor(match.gt_indices, dtype=torch.long)
            pr_idx = torch.as_tensor(match.pred_indices, dtype=torch.long)
            targets[pr_idx] = FOREGROUND
            sample = sample + span_loss(gt_spans[i][gt_idx], pred_spans[i][pr_idx], weights).sum()
        cls = -log_probs[i].gather(1, targets.unsqueeze(1)).squeeze(1)
        sample = sample + weights.cls * cls.sum()
        total = total + sample
    return total / b


@dataclass
class LossReport:
    """Every objective component plus the weighted total, all scalars."""

    margin: torch.Tensor
    rank: torch.Tensor
    hd: torch.Tensor
    mr: torch.Tensor
    clip: torch.Tensor
    frame: torch.Tensor
    total: torch.Tensor

    def detach_floats(self) -> dict[str, float]:
        return {k: float(v.detach()) for k, v in vars(self).items()}


def total_loss(
    margin: torch.Tensor,
    rank: torch.Tensor,
    mr: torch.Tensor,
    clip: torch.Tensor,
    frame: torch.Tensor,
    weights: LossWeights,
) -> LossReport:
    """Overall objective: highlight + moment retrieval + weighted alignment terms."""
    hd = margin + rank
    total = hd + mr + weights.clip * clip + weights.frame * frame
    return LossReport(margin=margin, rank=rank, hd=hd, mr=mr, clip=clip, frame=frame, total=total)
