"""Moment-retrieval and highlight-detection evaluation.

MR: Recall@1 at IoU thresholds plus mean average precision over the
[0.5:0.05:0.95] IoU sweep, AP computed per sample with greedy one-to-one GT
matching in score order and averaged over samples.

HD: average precision of clips ranked by predicted saliency against the
"label >= 4" relevance rule, plus HIT@1 for the top-scored clip.

All metrics depend only on the ranking of scores, never their scale. AP is
all-points (rectangular PR integration, no 11-point interpolation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

Span = tuple[float, float]

MAP_IOU_SWEEP = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
R1_THRESHOLDS = (0.5, 0.7)
HD_POSITIVE_LABEL = 4.0


def iou_1d(a: Span, b: Span) -> float:
    """Intersection over union of two (start, end) intervals; 0 when disjoint."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    if union <= 0:
        return 0.0
    return inter / union


@dataclass
class MRResult:
    r1_at: dict[float, float] = field(default_factory=dict)
    map_at: dict[float, float] = field(default_factory=dict)
    map_avg: float = 0.0

    def to_dict(self) -> dict:
        return {
            "r1": {f"{t:g}": v for t, v in self.r1_at.items()},
            "map": {f"{t:g}": v for t, v in self.map_at.items()},
            "map_avg": self.map_avg,
        }


@dataclass
class HDResult:
    map: float = 0.0
    hit_at_1: float = 0.0

    def to_dict(self) -> dict:
        return {"map": self.map, "hit_at_1": self.hit_at_1}


def _score_order(scores: Sequence[float]) -> list[int]:
    """Descending by score, ties broken by lower index."""
    return sorted(range(len(scores)), key=lambda i: (-float(scores[i]), i))


def recall_at_1(
    predictions: Sequence[Sequence[tuple[float, float, float]]],
    gts: Sequence[Sequence[Span]],
    threshold: float,
) -> float:
    """Fraction of samples whose top-scored prediction reaches the IoU threshold
    against at least one GT moment."""
    if len(predictions) != len(gts):
        raise ValueError("predictions and gts must align per sample")
    hits = 0
    for preds, gt in zip(predictions, gts):
        if len(preds) == 0:
            raise ValueError("every sample needs at least one prediction")
        top = preds[_score_order([p[2] for p in preds])[0]]
        if any(iou_1d((top[0], top[1]), g) >= threshold for g in gt):
            hits += 1
    return hits / len(predictions)


def average_precision_spans(
    preds: Sequence[tuple[float, float, float]],
    gt: Sequence[Span],
    threshold: float,
) -> float:
    """All-points AP for one sample with greedy one-to-one matching in score order.

    A prediction is a true positive when it overlaps an as-yet-unmatched GT
    moment at IoU >= threshold (best-overlap GT is consumed).
    """
    if len(gt) == 0:
        raise ValueError("AP needs at least one GT moment")
    order = _score_order([p[2] for p in preds])
    matched = [False] * len(gt)
    tp = 0
    ap = 0.0
    for rank, idx in enumerate(order, start=1):
        span = (preds[idx][0], preds[idx][1])
        best_iou, best_j = 0.0, -1
        for j, g in enumerate(gt):
            if matched[j]:
                continue
            iou = iou_1d(span, g)
            if iou >= threshold and iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0:
            matched[best_j] = True
            tp += 1
            ap += tp / rank
    return ap / len(gt)


def map_moments(
    predictions: Sequence[Sequence[tuple[float, float, float]]],
    gts: Sequence[Sequence[Span]],
    thresholds: Sequence[float] = MAP_IOU_SWEEP,
) -> dict[float, float]:
    """Per-threshold AP averaged over samples."""
    out = {}
    for t in thresholds:
        vals = [average_precision_spans(p, g, t) for p, g in zip(predictions, gts)]
        out[t] = float(np.mean(vals)) if vals else 0.0
    return out


def evaluate_moments(
    predictions: Sequence[Sequence[tuple[float, float, float]]],
    gts: Sequence[Sequence[Span]],
) -> MRResult:
    map_at = map_moments(predictions, gts)
    return MRResult(
        r1_at={t: recall_at_1(predictions, gts, t) for t in R1_THRESHOLDS},
        map_at=map_at,
        map_avg=float(np.mean(list(map_at.values()))),
    )


def average_precision_saliency(scores: Sequence[float], labels: Sequence[float]) -> float | None:
    """AP of clips ranked by score with relevance = label >= 4.

    Returns None when the sample has no positive clip (skipped upstream).
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels must align per clip")
    relevant = [float(l) >= HD_POSITIVE_LABEL for l in labels]
    n_pos = sum(relevant)
    if n_pos == 0:
        return None
    order = _score_order(scores)
    tp = 0
    ap = 0.0
    for rank, idx in enumerate(order, start=1):
        if relevant[idx]:
            tp += 1
            ap += tp / rank
    return ap / n_pos


def hd_map(scores_per_sample: Sequence[Sequence[float]], labels_per_sample: Sequence[Sequence[float]]) -> float:
    """Mean AP over samples that contain at least one clip labeled >= 4."""
    vals = []
    for scores, labels in zip(scores_per_sample, labels_per_sample):
        ap = average_precision_saliency(scores, labels)
        if ap is not None:
            vals.append(ap)
    return float(np.mean(vals)) if vals else 0.0


def hit_at_1(scores_per_sample: Sequence[Sequence[float]], labels_per_sample: Sequence[Sequence[float]]) -> float:
    """Fraction of samples whose top-scored clip carries a label >= 4.

    Ties at the top are broken by the lowest clip index.
    """
    hits, total = 0, 0
    for scores, labels in zip(scores_per_sample, labels_per_sample):
        if len(scores) == 0:
            continue
        top = _score_order(scores)[0]
        total += 1
        if float(labels[top]) >= HD_POSITIVE_LABEL:
            hits += 1
    return hits / total if total else 0.0


def evaluate_highlights(
    scores_per_sample: Sequence[Sequence[float]],
    labels_per_sample: Sequence[Sequence[float]],
) -> HDResult:
    return HDResult(
        map=hd_map(scores_per_sample, labels_per_sample),
        hit_at_1=hit_at_1(scores_per_sample, labels_per_sample),
    )
