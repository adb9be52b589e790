"""Shared data model: feature sequences, temporal spans, labels, and batches.

Conventions used across the package:
  * masks are boolean with True = valid position;
  * spans are normalized by video duration, stored as (center, width);
  * seconds appear only at I/O boundaries;
  * label padding uses the sentinel -1, which no loss ever reads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch

LABEL_PAD = -1


@dataclass
class FeatureSequence:
    """A length-L sequence of d-dimensional embeddings with a validity mask."""

    embeddings: torch.Tensor  # (L, d)
    mask: torch.Tensor  # (L,) bool, True = valid

    def __post_init__(self):
        if self.embeddings.ndim != 2:
            raise ValueError(f"embeddings must be (L, d), got shape {tuple(self.embeddings.shape)}")
        if self.embeddings.shape[0] < 1 or self.embeddings.shape[1] < 1:
            raise ValueError("FeatureSequence needs length >= 1 and dim >= 1")
        self.mask = self.mask.bool()
        if self.mask.shape != (self.embeddings.shape[0],):
            raise ValueError("mask must be a (L,) vector matching embeddings")
        if not bool(self.mask.any()):
            raise ValueError("FeatureSequence mask must have at least one valid position")

    @property
    def length(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def valid_length(self) -> int:
        return int(self.mask.sum())

    def valid_embeddings(self) -> torch.Tensor:
        """Rows at valid positions only, shape (n_valid, d)."""
        return self.embeddings[self.mask]

    @classmethod
    def from_array(cls, embeddings: torch.Tensor) -> "FeatureSequence":
        """Wrap a dense (L, d) matrix with an all-true mask."""
        return cls(embeddings, torch.ones(embeddings.shape[0], dtype=torch.bool))


@dataclass(frozen=True)
class Moment:
    """A temporal span as (center, width), both fractions of video duration."""

    center: float
    width: float

    def __post_init__(self):
        if not (0.0 <= self.center <= 1.0):
            raise ValueError(f"moment center must lie in [0, 1], got {self.center}")
        if self.width <= 0.0:
            raise ValueError(f"moment width must be positive, got {self.width}")

    def span(self) -> tuple[float, float]:
        return center_width_to_span(self)


def span_to_center_width(start: float, end: float) -> Moment:
    """Convert a normalized (start, end) span to its (center, width) form."""
    if not (0.0 <= start < end <= 1.0):
        raise ValueError(f"span must satisfy 0 <= start < end <= 1, got ({start}, {end})")
    return Moment(center=(start + end) / 2.0, width=end - start)


def center_width_to_span(m: Moment) -> tuple[float, float]:
    """Inverse of span_to_center_width; endpoints clamped to [0, 1]."""
    start = min(max(m.center - m.width / 2.0, 0.0), 1.0)
    end = min(max(m.center + m.width / 2.0, 0.0), 1.0)
    return start, end


def spans_cw_to_se(spans: torch.Tensor) -> torch.Tensor:
    """Tensor form of center_width_to_span. (..., 2) cw -> (..., 2) start/end, clamped."""
    center, width = spans[..., 0], spans[..., 1]
    start = (center - width / 2).clamp(0.0, 1.0)
    end = (center + width / 2).clamp(0.0, 1.0)
    return torch.stack([start, end], dim=-1)


def spans_se_to_cw(spans: torch.Tensor) -> torch.Tensor:
    """Tensor form of span_to_center_width. (..., 2) start/end -> (..., 2) cw."""
    start, end = spans[..., 0], spans[..., 1]
    return torch.stack([(start + end) / 2, end - start], dim=-1)


@dataclass
class SaliencyVector:
    """Per-clip relevance scores over a video's valid clips."""

    scores: torch.Tensor  # (L_v,)

    def __post_init__(self):
        if self.scores.ndim != 1:
            raise ValueError("saliency scores must be a 1-D vector")
        if not torch.isfinite(self.scores).all():
            raise ValueError("saliency scores must be finite")


@dataclass
class RelevanceLabels:
    """Binary per-clip indicators: 1 = the clip lies inside some GT moment."""

    indicators: torch.Tensor  # (L_v,) values in {0, 1}

    def __post_init__(self):
        vals = torch.unique(self.indicators)
        if not bool(((vals == 0) | (vals == 1)).all()):
            raise ValueError("relevance indicators must be binary")


def relevance_from_moments(moments: Sequence[Moment], n_clips: int) -> RelevanceLabels:
    """Mark clips whose midpoint falls inside any GT moment.

    The midpoint rule avoids double-counting clips that merely touch a
    moment boundary.
    """
    midpoints = (torch.arange(n_clips, dtype=torch.float64) + 0.5) / n_clips
    indicators = torch.zeros(n_clips, dtype=torch.long)
    for m in moments:
        start, end = center_width_to_span(m)
        indicators |= ((midpoints >= start) & (midpoints < end)).long()
    return RelevanceLabels(indicators)


@dataclass
class GroundingSample:
    """One (video, query) training/eval record."""

    video: FeatureSequence
    text: FeatureSequence
    gt_moments: list[Moment]
    relevance: RelevanceLabels
    duration: float  # seconds
    # (L_v,) levels in [0, 4]; fractional when annotator scores were averaged.
    # None when the dataset carries no HD annotation.
    saliency_labels: torch.Tensor | None = None
    qid: str = ""
    vid: str = ""
    query: str = ""

    @property
    def has_saliency(self) -> bool:
        return self.saliency_labels is not None


@dataclass
class MomentPredictionSet:
    """M predicted spans with foreground probabilities."""

    spans: torch.Tensor  # (M, 2) normalized (center, width)
    fg_prob: torch.Tensor  # (M,) in [0, 1]

    def __post_init__(self):
        if self.spans.shape[0] != self.fg_prob.shape[0]:
            raise ValueError("spans and fg_prob must have the same count")
        if bool((self.fg_prob < 0).any()) or bool((self.fg_prob > 1).any()):
            raise ValueError("foreground probabilities must lie in [0, 1]")

    def __len__(self) -> int:
        return self.spans.shape[0]


@dataclass
class Batch:
    """Padded batch of GroundingSamples. Padding positions are mask-False."""

    video: torch.Tensor  # (B, L_v, d_v)
    video_mask: torch.Tensor  # (B, L_v) bool
    text: torch.Tensor  # (B, L_t, d_t)
    text_mask: torch.Tensor  # (B, L_t) bool
    gt_spans: list[torch.Tensor]  # per sample (n_i, 2) normalized cw spans
    relevance: torch.Tensor  # (B, L_v) in {0,1}, LABEL_PAD on padding
    saliency: torch.Tensor  # (B, L_v) levels in [0,4], LABEL_PAD on padding or missing annotation
    has_saliency: torch.Tensor  # (B,) bool
    durations: torch.Tensor  # (B,) seconds
    samples: list[GroundingSample] = field(default_factory=list)

    def __len__(self) -> int:
        return self.video.shape[0]

    def to(self, dtype: torch.dtype) -> "Batch":
        return Batch(
            video=self.video.to(dtype),
            video_mask=self.video_mask,
            text=self.text.to(dtype),
            text_mask=self.text_mask,
            gt_spans=[s.to(dtype) for s in self.gt_spans],
            relevance=self.relevance,
            saliency=self.saliency,
            has_saliency=self.has_saliency,
            durations=self.durations.to(dtype),
            samples=self.samples,
        )


def _pad_stack(seqs: list[torch.Tensor], length: int) -> torch.Tensor:
    out = seqs[0].new_zeros((len(seqs), length, seqs[0].shape[1]))
    for i, s in enumerate(seqs):
        out[i, : s.shape[0]] = s
    return out


def collate(samples: Sequence[GroundingSample]) -> Batch:
    """Pad a list of samples to the batch max lengths.

    Feature padding is zero; label padding is LABEL_PAD and excluded from
    every loss via the masks.
    """
    if len(samples) == 0:
        raise ValueError("cannot collate an empty batch")
    max_v = max(s.video.length for s in samples)
    max_t = max(s.text.length for s in samples)

    video = _pad_stack([s.video.embeddings for s in samples], max_v)
    text = _pad_stack([s.text.embeddings for s in samples], max_t)

    video_mask = torch.zeros(len(samples), max_v, dtype=torch.bool)
    text_mask = torch.zeros(len(samples), max_t, dtype=torch.bool)
    relevance = torch.full((len(samples), max_v), LABEL_PAD, dtype=torch.long)
    # float: annotator-averaged labels may be fractional
    saliency = torch.full((len(samples), max_v), float(LABEL_PAD), dtype=torch.float32)
    has_saliency = torch.zeros(len(samples), dtype=torch.bool)

    for i, s in enumerate(samples):
        video_mask[i, : s.video.length] = s.video.mask
        text_mask[i, : s.text.length] = s.text.mask
        relevance[i, : s.video.length] = s.relevance.indicators
        if s.saliency_labels is not None:
            saliency[i, : s.video.length] = s.saliency_labels.float()
            has_saliency[i] = True

    gt_spans = [
        torch.tensor([[m.center, m.width] for m in s.gt_moments], dtype=video.dtype).reshape(-1, 2)
        for s in samples
    ]
    durations = torch.tensor([s.duration for s in samples], dtype=video.dtype)
    return Batch(
        video=video,
        video_mask=video_mask,
        text=text,
        text_mask=text_mask,
        gt_spans=gt_spans,
        relevance=relevance,
        saliency=saliency,
        has_saliency=has_saliency,
        durations=durations,
        samples=list(samples),
    )


def uncollate(batch: Batch) -> list[tuple[torch.Tensor, torch.Tensor]]:
    """Mask-select every (video, text) sequence back out of a padded batch."""
    out = []
    for i in range(len(batch)):
        v = batch.video[i][: int(batch.samples[i].video.length)]
        t = batch.text[i][: int(batch.samples[i].text.length)]
        out.append((v, t))
    return out
