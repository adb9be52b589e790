"""Command-line entry points: train, eval, predict, ablate, plot."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .anchors import ANCHOR_METHODS
from .config import load_config
from .harness import (
    ablate,
    evaluate_model,
    load_checkpoint,
    load_split_lenient,
    predict_records,
    render_ablation_table,
    train,
    write_predictions,
)
from .plotting import plot_predictions


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.anchor is not None:
        cfg.anchor = args.anchor
    if args.out_dir is not None:
        cfg.train.out_dir = args.out_dir
    result = train(cfg, quiet=args.quiet)
    print(f"trained {result.epochs_run} epochs; log: {result.log_path}")
    print(f"last checkpoint: {result.last_checkpoint}")
    if result.best_checkpoint is not None:
        print(f"best checkpoint: {result.best_checkpoint}")
        print(json.dumps(result.best_metrics, indent=2))
    return 0


def _cmd_eval(args) -> int:
    model, cfg, _ = load_checkpoint(Path(args.ckpt))
    samples, errors = load_split_lenient(cfg, args.split)
    for err in errors:
        print(f"warning: {err}", file=sys.stderr)
    report, _ = evaluate_model(model, samples, cfg, mode=args.mode)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def _cmd_predict(args) -> int:
    model, cfg, _ = load_checkpoint(Path(args.ckpt))
    samples, errors = load_split_lenient(cfg, args.split)
    for err in errors:
        print(f"warning: {err}", file=sys.stderr)
    records = predict_records(
        model, samples, batch_size=cfg.train.batch_size, use_nms=args.nms, nms_iou=args.nms_iou
    )
    write_predictions(records, Path(args.out))
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    with open(args.grid) as f:
        grid = yaml.safe_load(f)
    if not isinstance(grid, dict) or not grid:
        raise SystemExit("grid file must map config keys to value lists")
    grid = {k: (v if isinstance(v, list) else [v]) for k, v in grid.items()}
    result = ablate(cfg, grid, quiet=args.quiet)
    table = render_ablation_table(result["rows"])
    out_dir = Path(cfg.train.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(json.dumps(result, indent=2))
    (out_dir / "ablation.tsv").write_text(table + "\n")
    print(table)
    return 0


def _cmd_plot(args) -> int:
    model, cfg, _ = load_checkpoint(Path(args.ckpt)) if args.ckpt else (None, None, None)
    if args.ckpt:
        samples, _ = load_split_lenient(cfg, args.split)
        records = predict_records(model, samples, batch_size=cfg.train.batch_size)
    else:
        from .harness import read_predictions

        if not args.input or not args.config:
            raise SystemExit("plot needs either --ckpt, or --in plus --config")
        cfg = load_config(args.config)
        samples, _ = load_split_lenient(cfg, args.split)
        records = read_predictions(Path(args.input))
    qids = args.qids.split(",") if args.qids else None
    written = plot_predictions(samples, records, Path(args.out), qids)
    print(f"wrote {len(written)} figures to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vtground", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--anchor", choices=ANCHOR_METHODS, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--mode", choices=["standard", "gate_saliency"], default="standard")
    p.add_argument("--out", default=None, help="optional JSON report path")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("predict", help="write a JSON-lines submission file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out", required=True)
    p.add_argument("--nms", action="store_true")
    p.add_argument("--nms-iou", type=float, default=0.7)
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("ablate", help="train a grid of configs and tabulate reports")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True, help="YAML mapping of config keys to value lists")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("plot", help="render saliency/moment figures per qid")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--in", dest="input", default=None, help="prediction JSONL file")
    p.add_argument("--config", default=None, help="config for samples when using --in")
    p.add_argument("--split", default="val")
    p.add_argument("--out", required=True)
    p.add_argument("--qids", default=None, help="comma-separated qids (default: all)")
    p.set_defaults(fn=_cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
