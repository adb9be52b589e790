"""Training, evaluation, prediction, and ablation entry points."""

from __future__ import annotations

import copy
import itertools
import json
import random
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .config import RunConfig, config_from_dict, config_to_dict, apply_override, resolve_data_path
from .core import (
    Batch,
    GroundingSample,
    MomentPredictionSet,
    center_width_to_span,
    collate,
    relevance_from_moments,
)
from .data import (
    DatasetManifest,
    FeatureError,
    SyntheticConfig,
    generate_synthetic_splits,
    load_annotations,
    load_features,
    saliency_tensor_from_raw,
)
from .heads import rank_predictions
from .losses import (
    LossReport,
    LossWeights,
    clip_consistency_loss,
    frame_relevance_loss,
    margin_loss,
    moment_retrieval_loss,
    rank_contrastive_loss,
    sample_margin_indices,
    total_loss,
)
from .metrics import evaluate_highlights, evaluate_moments
from .model import GroundingModel, ModelOutput


class TrainingDiverged(RuntimeError):
    """Raised when a loss component stops being finite; names the culprit."""


def set_seeds(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def build_model(cfg: RunConfig, video_dim: int, text_dim: int) -> GroundingModel:
    return GroundingModel(
        video_dim=video_dim,
        text_dim=text_dim,
        dim=cfg.model.dim,
        heads=cfg.interaction.heads,
        interaction_layers=cfg.interaction.layers,
        encoder_layers=cfg.encoder.layers,
        decoder_layers=cfg.decoder.layers,
        queries=cfg.decoder.queries,
        dropout=cfg.train.dropout,
        anchor_method=cfg.anchor,
        local_gate=cfg.interaction.local_gate,
        nonlocal_gate=cfg.interaction.nonlocal_gate,
        saliency_vector_weights=cfg.saliency.vector_weights,
        use_position=cfg.interaction.use_position,
    )


def _synthetic_config(cfg: RunConfig) -> SyntheticConfig:
    s = cfg.data.synthetic
    return SyntheticConfig(
        n_samples=s.n_train + s.n_val,
        video_len=tuple(s.video_len),
        text_len=tuple(s.text_len),
        video_dim=s.video_dim,
        text_dim=s.text_dim,
        signal_strength=s.signal_strength,
        noise_std=s.noise_std,
        moments_per_video=tuple(s.moments_per_video),
        distractor_rate=s.distractor_rate,
        concept_pool=s.concept_pool,
        seed=s.seed,
        clip_duration=s.clip_duration,
    )


def split_manifest(cfg: RunConfig, split: str) -> DatasetManifest:
    m = cfg.data.manifest
    if split not in m.splits:
        raise ValueError(f"split {split!r} not defined; have {sorted(m.splits)}")
    sp = m.splits[split]
    return DatasetManifest(
        annotations=resolve_data_path(sp.annotations),
        video_features=resolve_data_path(sp.video_features),
        text_features=resolve_data_path(sp.text_features),
        clip_duration=m.clip_duration,
        video_dim=m.video_dim,
        text_dim=m.text_dim,
        l2_normalize=m.l2_normalize,
    )


def load_split(cfg: RunConfig, split: str) -> list[GroundingSample]:
    if cfg.data.source == "synthetic":
        splits = generate_synthetic_splits(
            _synthetic_config(cfg), cfg.data.synthetic.n_train, cfg.data.synthetic.n_val
        )
        if split == "train":
            return splits.train
        if split == "val":
            return splits.val
        raise ValueError(f"synthetic data has splits train/val, not {split!r}")
    if cfg.data.source == "manifest":
        samples, errors = load_split_lenient(cfg, split)
        if errors:
            raise FeatureError("; ".join(errors))
        return samples
    raise ValueError(f"unknown data source {cfg.data.source!r}")


def load_split_lenient(cfg: RunConfig, split: str) -> tuple[list[GroundingSample], list[str]]:
    """Load a manifest split, collecting per-record feature errors instead of
    aborting; synthetic splits never produce errors."""
    if cfg.data.source == "synthetic":
        return load_split(cfg, split), []
    manifest = split_manifest(cfg, split)
    samples, errors = [], []
    for rec in load_annotations(manifest):
        try:
            video = load_features(
                manifest.video_features, rec["vid"], manifest.video_dim, manifest.l2_normalize
            )
            text = load_features(
                manifest.text_features, rec["qid"], manifest.text_dim, manifest.l2_normalize
            )
        except FeatureError as e:
            errors.append(f"qid {rec['qid']}: {e}")
            continue
        saliency = None
        if rec.get("saliency_scores") is not None:
            saliency = saliency_tensor_from_raw(
                rec["saliency_scores"], video.length, f"qid {rec['qid']}"
            )
        samples.append(
            GroundingSample(
                video=video,
                text=text,
                gt_moments=rec["moments"],
                relevance=relevance_from_moments(rec["moments"], video.length),
                duration=float(rec["duration"]),
                saliency_labels=saliency,
                qid=str(rec["qid"]),
                vid=str(rec["vid"]),
                query=str(rec["query"]),
            )
        )
    return samples, errors


def compute_losses(
    model: GroundingModel,
    output: ModelOutput,
    batch: Batch,
    weights: LossWeights,
    margin_generator: torch.Generator | None = None,
) -> LossReport:
    """Every objective term on one batch; ablated terms are multiplied out by
    their weights rather than skipped, so all configurations share this path."""
    clip = clip_consistency_loss(output.anchor, model.anchor_video_table(output))
    frame = frame_relevance_loss(
        output.refined_video, output.anchor, batch.relevance, batch.video_mask
    )
    t_in, t_out = sample_margin_indices(batch.relevance, batch.video_mask, margin_generator)
    margin = margin_loss(
        output.saliency, batch.relevance, batch.video_mask, weights.margin_delta, t_in, t_out
    )
    rank_labels = torch.where(
        batch.has_saliency.unsqueeze(1), batch.saliency, batch.relevance.float()
    )
    rank = rank_contrastive_loss(output.saliency, rank_labels, batch.video_mask, weights.rank_tau)
    mr = moment_retrieval_loss(batch.gt_spans, output.pred_spans, output.class_logits, weights)
    return total_loss(margin=margin, rank=rank, mr=mr, clip=clip, frame=frame, weights=weights)


def _raise_if_diverged(report: LossReport, epoch: int, step: int) -> None:
    for name in ("margin", "rank", "mr", "clip", "frame", "total"):
        value = getattr(report, name)
        if not bool(torch.isfinite(value)):
            raise TrainingDiverged(
                f"non-finite loss component {name!r} at epoch {epoch}, step {step}"
            )


def _adam_param_groups(model: GroundingModel, lr: float, weight_decay: float):
    decay, no_decay = [], []
    for p in model.parameters():
        (decay if p.ndim >= 2 else no_decay).append(p)
    return torch.optim.Adam(
        [
            {"params": decay, "weight_decay": weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=lr,
    )


def _batches(n: int, batch_size: int, generator: torch.Generator | None = None):
    order = torch.randperm(n, generator=generator).tolist() if generator is not None else list(range(n))
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


@dataclass
class TrainResult:
    out_dir: Path
    log_path: Path
    last_checkpoint: Path
    best_checkpoint: Path | None
    best_metrics: dict | None
    history: list[dict] = field(default_factory=list)
    model: GroundingModel | None = None
    epochs_run: int = 0


def save_checkpoint(path: Path, model: GroundingModel, cfg: RunConfig, epoch: int, meta: dict | None = None):
    payload = {
        "state_dict": model.state_dict(),
        "config": config_to_dict(cfg),
        "epoch": epoch,
        "video_dim": model.video_proj.net[1].in_features,
        "text_dim": model.text_proj.net[1].in_features,
        "meta": meta or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: Path) -> tuple[GroundingModel, RunConfig, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg = config_from_dict(payload["config"])
    model = build_model(cfg, payload["video_dim"], payload["text_dim"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, cfg, {"epoch": payload["epoch"], **payload.get("meta", {})}


def train(
    cfg: RunConfig,
    stop_fn: Callable[[dict], bool] | None = None,
    quiet: bool = True,
) -> TrainResult:
    """Optimize the full objective; logs per-epoch loss components and lr,
    checkpoints periodically and at the best validation map_avg."""
    out_dir = Path(cfg.train.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    set_seeds(cfg.train.seed)

    train_samples = load_split(cfg, "train")
    try:
        val_samples = load_split(cfg, "val")
    except ValueError:
        val_samples = []
    if not train_samples:
        raise ValueError("training split is empty")

    model = build_model(cfg, train_samples[0].video.dim, train_samples[0].text.dim)
    weights = cfg.loss
    opt = _adam_param_groups(model, cfg.optimizer.lr, cfg.optimizer.weight_decay)
    sampler = torch.Generator().manual_seed(cfg.train.seed)
    margin_gen = torch.Generator().manual_seed(cfg.train.seed + 1)

    log_path = out_dir / "train_log.jsonl"
    log_file = open(log_path, "w")
    best_map = float("-inf")
    best_ckpt: Path | None = None
    best_metrics: dict | None = None
    history: list[dict] = []
    epochs_run = 0

    try:
        for epoch in range(1, cfg.train.epochs + 1):
            lr_now = cfg.optimizer.lr * (
                cfg.optimizer.decay_factor if epoch > cfg.optimizer.decay_epoch else 1.0
            )
            for group in opt.param_groups:
                group["lr"] = lr_now

            model.train()
            sums: dict[str, float] = {}
            n_batches = 0
            for step, idx in enumerate(_batches(len(train_samples), cfg.train.batch_size, sampler)):
                batch = collate([train_samples[i] for i in idx])
                output = model.forward_batch(batch)
                report = compute_losses(model, output, batch, weights, margin_gen)
                _raise_if_diverged(report, epoch, step)
                opt.zero_grad()
                report.total.backward()
                if cfg.optimizer.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.optimizer.grad_clip)
                opt.step()
                for k, v in report.detach_floats().items():
                    sums[k] = sums.get(k, 0.0) + v
                n_batches += 1

            entry = {"epoch": epoch, "lr": lr_now}
            entry.update({f"loss_{k}": v / n_batches for k, v in sums.items()})

            metrics = None
            due_eval = val_samples and (
                epoch % cfg.train.eval_every == 0 or epoch == cfg.train.epochs
            )
            if due_eval:
                metrics, _ = evaluate_model(model, val_samples, cfg)
                entry["val"] = metrics
                map_avg = metrics["mr"]["map_avg"]
                if map_avg > best_map:
                    best_map = map_avg
                    best_metrics = metrics
                    best_ckpt = out_dir / "best.pt"
                    save_checkpoint(best_ckpt, model, cfg, epoch, {"val": metrics})

            if epoch % cfg.train.checkpoint_every == 0:
                save_checkpoint(out_dir / f"epoch_{epoch:04d}.pt", model, cfg, epoch)

            log_file.write(json.dumps(entry) + "\n")
            log_file.flush()
            history.append(entry)
            epochs_run = epoch
            if not quiet:
                parts = [f"epoch {epoch}", f"loss {entry.get('loss_total', 0.0):.4f}"]
                if metrics:
                    parts.append(f"val map_avg {metrics['mr']['map_avg']:.4f}")
                print("  ".join(parts), file=sys.stderr)
            if stop_fn is not None and metrics is not None and stop_fn(metrics):
                break
    finally:
        log_file.close()

    last_ckpt = out_dir / "last.pt"
    save_checkpoint(last_ckpt, model, cfg, epochs_run)
    return TrainResult(
        out_dir=out_dir,
        log_path=log_path,
        last_checkpoint=last_ckpt,
        best_checkpoint=best_ckpt,
        best_metrics=best_metrics,
        history=history,
        model=model,
        epochs_run=epochs_run,
    )


def predict_records(
    model: GroundingModel,
    samples: Sequence[GroundingSample],
    mode: str = "standard",
    batch_size: int = 32,
    use_nms: bool = False,
    nms_iou: float = 0.7,
) -> list[dict]:
    """Run inference and emit one submission record per sample.

    Records hold spans in seconds as [start, end, score] ranked by foreground
    probability, plus the per-clip saliency array. Mode `gate_saliency`
    replaces the saliency head scores with the final-layer non-local gate.
    """
    if mode not in ("standard", "gate_saliency"):
        raise ValueError(f"unknown eval mode {mode!r}")
    model.eval()
    records = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = list(samples[start : start + batch_size])
            batch = collate(chunk)
            output = model.forward_batch(batch)
            scores = output.non_local_weights if mode == "gate_saliency" else output.saliency
            for i, sample in enumerate(chunk):
                ranked = rank_predictions(
                    MomentPredictionSet(output.pred_spans[i], output.fg_prob[i]),
                    use_nms=use_nms,
                    nms_iou=nms_iou,
                )
                duration = sample.duration
                windows = [
                    [max(0.0, p.span[0]) * duration, min(1.0, p.span[1]) * duration, p.score]
                    for p in ranked
                ]
                valid = batch.video_mask[i, : sample.video.length]
                clip_scores = scores[i, : sample.video.length][valid]
                records.append(
                    {
                        "qid": sample.qid,
                        "pred_relevant_windows": windows,
                        "pred_saliency_scores": [float(x) for x in clip_scores],
                    }
                )
    return records


def evaluate_records(
    records: Sequence[dict], samples: Sequence[GroundingSample], mode: str = "standard"
) -> dict:
    """Score submission records against sample ground truth.

    HD metrics appear only when some evaluated sample has saliency labels; in
    gate_saliency mode the MR section is omitted entirely.
    """
    by_qid = {s.qid: s for s in samples}
    mr_preds, mr_gts = [], []
    hd_scores, hd_labels = [], []
    for rec in records:
        sample = by_qid[rec["qid"]]
        if mode != "gate_saliency":
            mr_preds.append([(w[0], w[1], w[2]) for w in rec["pred_relevant_windows"]])
            mr_gts.append(
                [
                    tuple(x * sample.duration for x in center_width_to_span(m))
                    for m in sample.gt_moments
                ]
            )
        if sample.saliency_labels is not None:
            hd_scores.append(rec["pred_saliency_scores"])
            hd_labels.append([float(x) for x in sample.saliency_labels])
    report: dict = {}
    if mode != "gate_saliency":
        report["mr"] = evaluate_moments(mr_preds, mr_gts).to_dict()
    if hd_scores:
        report["hd"] = evaluate_highlights(hd_scores, hd_labels).to_dict()
    return report


def evaluate_model(
    model: GroundingModel,
    samples: Sequence[GroundingSample],
    cfg: RunConfig,
    mode: str = "standard",
) -> tuple[dict, list[dict]]:
    records = predict_records(model, samples, mode=mode, batch_size=cfg.train.batch_size)
    return evaluate_records(records, samples, mode=mode), records


def write_predictions(records: Sequence[dict], path: Path) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def read_predictions(path: Path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def ablate(cfg: RunConfig, grid: dict[str, list], quiet: bool = True) -> dict:
    """Train one run per grid point and aggregate the reports.

    Grid keys are dotted config paths (plus the `gates` and `seed`
    conveniences); invalid keys are rejected before any training starts.
    """
    for key, values in grid.items():
        probe = copy.deepcopy(cfg)
        for v in values:
            apply_override(probe, key, v)
    keys = list(grid)
    rows = []
    base_out = Path(cfg.train.out_dir)
    for combo_idx, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
        run_cfg = copy.deepcopy(cfg)
        overrides = dict(zip(keys, combo))
        for k, v in overrides.items():
            apply_override(run_cfg, k, v)
        run_cfg.train.out_dir = str(base_out / f"ablate_{combo_idx:03d}")
        result = train(run_cfg, quiet=quiet)
        metrics = result.best_metrics
        if metrics is None:
            metrics, _ = evaluate_model(result.model, load_split(run_cfg, "val"), run_cfg)
        rows.append({"overrides": overrides, "metrics": _table_metrics(metrics)})
    return {"rows": rows}


def _table_metrics(report: dict) -> dict:
    mr = report.get("mr", {})
    hd = report.get("hd", {})
    return {
        "r1@0.5": mr.get("r1", {}).get("0.5"),
        "r1@0.7": mr.get("r1", {}).get("0.7"),
        "map_avg": mr.get("map_avg"),
        "hd_map": hd.get("map"),
    }


def render_ablation_table(rows: Sequence[dict]) -> str:
    """Plain-text table with the gate-ablation column layout."""
    header = ["config", "R1@0.5", "R1@0.7", "mAP avg", "HD mAP"]
    lines = ["\t".join(header)]
    for row in rows:
        name = ", ".join(f"{k}={v}" for k, v in row["overrides"].items()) or "default"
        m = row["metrics"]
        cells = [name] + [
            f"{m[k]:.4f}" if m[k] is not None else "-"
            for k in ("r1@0.5", "r1@0.7", "map_avg", "hd_map")
        ]
        lines.append("\t".join(cells))
    return "\n".join(lines)
