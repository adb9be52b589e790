import json

import pytest
import yaml

from vtground.cli import main
from vtground.config import config_to_dict
from vtground.harness import read_predictions

from test_harness import tiny_config


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = tiny_config(root / "run")
    cfg_path = root / "config.yaml"
    with open(cfg_path, "w") as f:
        yaml.safe_dump(config_to_dict(cfg), f)
    rc = main(["train", "--config", str(cfg_path), "--quiet"])
    assert rc == 0
    return root, cfg_path


def test_train_writes_checkpoints(workspace):
    root, _ = workspace
    assert (root / "run" / "last.pt").exists()
    assert (root / "run" / "best.pt").exists()
    assert (root / "run" / "train_log.jsonl").exists()


def test_eval_reports_metrics(workspace, capsys):
    root, _ = workspace
    out = root / "report.json"
    rc = main(["eval", "--ckpt", str(root / "run" / "last.pt"), "--split", "val", "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text())
    assert "mr" in report and "hd" in report


def test_eval_gate_saliency_mode(workspace):
    root, _ = workspace
    out = root / "gate_report.json"
    rc = main(
        [
            "eval",
            "--ckpt", str(root / "run" / "last.pt"),
            "--split", "val",
            "--mode", "gate_saliency",
            "--out", str(out),
        ]
    )
    assert rc == 0
    report = json.loads(out.read_text())
    assert "hd" in report and "mr" not in report


def test_predict_writes_submission(workspace):
    root, _ = workspace
    out = root / "preds.jsonl"
    rc = main(["predict", "--ckpt", str(root / "run" / "last.pt"), "--split", "val", "--out", str(out)])
    assert rc == 0
    records = read_predictions(out)
    assert len(records) == 4
    for rec in records:
        assert set(rec) == {"qid", "pred_relevant_windows", "pred_saliency_scores"}


def test_ablate_emits_table(workspace, tmp_path):
    root, cfg_path = workspace
    grid_path = tmp_path / "grid.yaml"
    grid_path.write_text("gates: [none, both]\n")
    cfg = yaml.safe_load(cfg_path.read_text())
    cfg["train"]["epochs"] = 1
    cfg["train"]["out_dir"] = str(tmp_path / "ablate_run")
    cfg2 = tmp_path / "cfg2.yaml"
    cfg2.write_text(yaml.safe_dump(cfg))
    rc = main(["ablate", "--config", str(cfg2), "--grid", str(grid_path), "--quiet"])
    assert rc == 0
    rows = json.loads((tmp_path / "ablate_run" / "ablation.json").read_text())["rows"]
    assert len(rows) == 2
    assert (tmp_path / "ablate_run" / "ablation.tsv").exists()


def test_plot_from_checkpoint(workspace, tmp_path):
    root, _ = workspace
    out_dir = tmp_path / "figs"
    rc = main(["plot", "--ckpt", str(root / "run" / "last.pt"), "--split", "val", "--out", str(out_dir)])
    assert rc == 0
    assert len(list(out_dir.glob("*.png"))) == 4


def test_plot_from_prediction_file(workspace, tmp_path):
    root, cfg_path = workspace
    preds = root / "preds_for_plot.jsonl"
    main(["predict", "--ckpt", str(root / "run" / "last.pt"), "--split", "val", "--out", str(preds)])
    out_dir = tmp_path / "figs2"
    rc = main(
        [
            "plot",
            "--in", str(preds),
            "--config", str(cfg_path),
            "--split", "val",
            "--out", str(out_dir),
        ]
    )
    assert rc == 0
    assert len(list(out_dir.glob("*.png"))) == 4
