"""Static per-sample figures: predicted saliency curve plus GT/predicted moment bars."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .core import GroundingSample, center_width_to_span


def render_sample(sample: GroundingSample, record: dict | None, top_k: int = 3):
    """Build (but do not save) the figure for one qid: saliency over clip
    midpoints, GT windows shaded, top-k predicted windows as bars."""
    duration = sample.duration
    n_clips = sample.video.valid_length
    clip_dur = duration / n_clips
    times = [(i + 0.5) * clip_dur for i in range(n_clips)]

    fig, ax = plt.subplots(figsize=(8, 3))
    for m in sample.gt_moments:
        st, ed = center_width_to_span(m)
        ax.axvspan(st * duration, ed * duration, color="tab:green", alpha=0.2, label="_gt")

    if record is not None:
        scores = record.get("pred_saliency_scores", [])
        if scores:
            ax.plot(times[: len(scores)], scores, color="tab:blue", lw=1.5, label="saliency")
        windows = record.get("pred_relevant_windows", [])[:top_k]
        y0 = min(scores) if scores else 0.0
        for rank, (st, ed, score) in enumerate(windows):
            ax.plot(
                [st, ed],
                [y0 - 0.08 * (rank + 1)] * 2,
                color="tab:red",
                lw=3,
                solid_capstyle="butt",
            )
    ax.set_xlim(0.0, duration)
    ax.set_xlabel("seconds")
    ax.set_ylabel("saliency")
    ax.set_title(f"{sample.qid}: {sample.query}"[:80])
    fig.tight_layout()
    return fig


def plot_sample(
    sample: GroundingSample,
    record: dict | None,
    out_path: Path,
    top_k: int = 3,
) -> None:
    fig = render_sample(sample, record, top_k)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_predictions(
    samples: Sequence[GroundingSample],
    records: Sequence[dict],
    out_dir: Path,
    qids: Sequence[str] | None = None,
) -> list[Path]:
    """One image per requested qid (all record qids when unspecified).

    Records that reference unknown qids are skipped rather than fatal;
    samples without a record get a GT-only plot.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_qid = {r["qid"]: r for r in records}
    wanted = list(qids) if qids is not None else [s.qid for s in samples if s.qid in by_qid]
    sample_by_qid = {s.qid: s for s in samples}
    written = []
    for qid in wanted:
        sample = sample_by_qid.get(qid)
        if sample is None:
            continue
        path = out_dir / f"{qid}.png"
        plot_sample(sample, by_qid.get(qid), path)
        written.append(path)
    return written
