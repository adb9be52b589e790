import json

import pytest
import torch

from vtground.config import (
    ConfigError,
    RunConfig,
    apply_override,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
)
from vtground.core import center_width_to_span, collate
from vtground.harness import (
    TrainingDiverged,
    ablate,
    compute_losses,
    evaluate_model,
    evaluate_records,
    load_checkpoint,
    load_split,
    predict_records,
    render_ablation_table,
    train,
    write_predictions,
    read_predictions,
)
from vtground.losses import LossReport


def tiny_config(out_dir, **train_kwargs) -> RunConfig:
    cfg = config_from_dict(
        {
            "model": {"dim": 16},
            "interaction": {"layers": 1, "heads": 2},
            "encoder": {"layers": 1},
            "decoder": {"layers": 1, "queries": 4},
            "train": {
                "batch_size": 4,
                "epochs": 2,
                "seed": 3,
                "dropout": 0.0,
                "eval_every": 1,
                "checkpoint_every": 10,
                "out_dir": str(out_dir),
            },
            "optimizer": {"lr": 1e-3, "decay_epoch": 100},
            "data": {
                "source": "synthetic",
                "synthetic": {
                    "n_train": 8,
                    "n_val": 4,
                    "video_len": [6, 8],
                    "text_len": [3, 5],
                    "video_dim": 8,
                    "text_dim": 6,
                    "seed": 5,
                },
            },
        }
    )
    for k, v in train_kwargs.items():
        setattr(cfg.train, k, v)
    return cfg


class TestConfig:
    def test_yaml_round_trip(self, tmp_path):
        cfg = tiny_config(tmp_path / "run")
        path = tmp_path / "cfg.yaml"
        save_config(cfg, path)
        loaded = load_config(path)
        assert config_to_dict(loaded) == config_to_dict(cfg)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            config_from_dict({"model": {"width": 10}})

    def test_defaults_carry_stated_values(self):
        cfg = RunConfig()
        assert cfg.model.dim == 256
        assert cfg.interaction.layers == 2 and cfg.interaction.heads == 8
        assert cfg.encoder.layers == 3 and cfg.decoder.layers == 3
        assert cfg.decoder.queries == 10
        assert cfg.loss.l1 == 10.0 and cfg.loss.iou == 1.0 and cfg.loss.cls == 4.0
        assert cfg.loss.clip == 1.0 and cfg.loss.frame == 1.0
        assert cfg.loss.margin_delta == 0.2 and cfg.loss.rank_tau == 0.5
        assert cfg.train.epochs == 200 and cfg.train.batch_size == 32
        assert cfg.optimizer.lr == 1e-4 and cfg.optimizer.decay_epoch == 100
        assert cfg.anchor == "mean"

    def test_gate_override_presets(self):
        cfg = RunConfig()
        apply_override(cfg, "gates", "none")
        assert (cfg.interaction.local_gate, cfg.interaction.nonlocal_gate) == (False, False)
        apply_override(cfg, "gates", "nonlocal")
        assert (cfg.interaction.local_gate, cfg.interaction.nonlocal_gate) == (False, True)

    def test_dotted_override(self):
        cfg = RunConfig()
        apply_override(cfg, "loss.clip", 0.0)
        assert cfg.loss.clip == 0.0

    def test_invalid_override_key(self):
        with pytest.raises(ConfigError):
            apply_override(RunConfig(), "loss.gamma", 1.0)
        with pytest.raises(ConfigError):
            apply_override(RunConfig(), "loss", 1.0)


class TestTraining:
    def test_smoke_writes_loadable_checkpoint(self, tmp_path):
        cfg = tiny_config(tmp_path / "run")
        result = train(cfg)
        assert result.epochs_run == 2
        assert result.last_checkpoint.exists()
        model, cfg2, meta = load_checkpoint(result.last_checkpoint)
        assert meta["epoch"] == 2
        out, _ = evaluate_model(model, load_split(cfg2, "val"), cfg2)
        assert "mr" in out and "hd" in out

    def test_fixed_seed_epoch1_loss_reproducible(self, tmp_path):
        r1 = train(tiny_config(tmp_path / "a", epochs=1))
        r2 = train(tiny_config(tmp_path / "b", epochs=1))
        l1 = r1.history[0]["loss_total"]
        l2 = r2.history[0]["loss_total"]
        assert abs(l1 - l2) <= 1e-6

    def test_lr_decay_logged(self, tmp_path):
        cfg = tiny_config(tmp_path / "run", epochs=4)
        cfg.optimizer.decay_epoch = 2
        result = train(cfg)
        lrs = [e["lr"] for e in result.history]
        assert lrs[0] == lrs[1] == pytest.approx(1e-3)
        assert lrs[2] == lrs[3] == pytest.approx(1e-4)

    def test_log_records_every_component(self, tmp_path):
        result = train(tiny_config(tmp_path / "run", epochs=1))
        entry = json.loads(result.log_path.read_text().splitlines()[0])
        for key in ("loss_margin", "loss_rank", "loss_hd", "loss_mr", "loss_clip",
                    "loss_frame", "loss_total", "lr", "epoch"):
            assert key in entry

    def test_nan_loss_aborts_with_component_name(self, tmp_path, monkeypatch):
        import vtground.harness as harness_mod

        def poisoned(*args, **kwargs):
            nan = torch.tensor(float("nan"))
            zero = torch.tensor(0.0, requires_grad=True)
            return LossReport(
                margin=zero, rank=nan, hd=nan, mr=zero, clip=zero, frame=zero, total=nan
            )

        monkeypatch.setattr(harness_mod, "compute_losses", poisoned)
        with pytest.raises(TrainingDiverged, match="rank"):
            train(tiny_config(tmp_path / "run"))

    def test_checkpoint_every_k_epochs(self, tmp_path):
        cfg = tiny_config(tmp_path / "run", epochs=4)
        cfg.train.checkpoint_every = 2
        result = train(cfg)
        assert (result.out_dir / "epoch_0002.pt").exists()
        assert (result.out_dir / "epoch_0004.pt").exists()

    def test_early_stop_fn(self, tmp_path):
        cfg = tiny_config(tmp_path / "run", epochs=10)
        result = train(cfg, stop_fn=lambda metrics: True)
        assert result.epochs_run == 1


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    cfg = tiny_config(tmp_path_factory.mktemp("trained") / "run")
    result = train(cfg)
    return result, cfg


class TestEvaluation:
    def test_checkpoint_round_trip_bit_identical(self, trained):
        result, cfg = trained
        samples = load_split(cfg, "val")
        report_live, _ = evaluate_model(result.model, samples, cfg)
        model2, cfg2, _ = load_checkpoint(result.last_checkpoint)
        report_loaded, _ = evaluate_model(model2, samples, cfg2)
        assert report_live == report_loaded

    def test_prediction_file_round_trip_bit_identical(self, trained, tmp_path):
        result, cfg = trained
        samples = load_split(cfg, "val")
        records = predict_records(result.model, samples)
        path = tmp_path / "preds.jsonl"
        write_predictions(records, path)
        loaded = read_predictions(path)
        assert evaluate_records(loaded, samples) == evaluate_records(records, samples)

    def test_gt_windows_as_predictions_r1_is_one(self, trained):
        _, cfg = trained
        samples = load_split(cfg, "val")
        records = []
        for s in samples:
            windows = [
                [st * s.duration, ed * s.duration, 1.0]
                for st, ed in (center_width_to_span(m) for m in s.gt_moments)
            ]
            records.append(
                {"qid": s.qid, "pred_relevant_windows": windows, "pred_saliency_scores": [0.0] * s.video.length}
            )
        report = evaluate_records(records, samples)
        assert report["mr"]["r1"]["0.5"] == 1.0
        assert report["mr"]["r1"]["0.7"] == 1.0

    def test_gate_saliency_mode_hd_only(self, trained):
        result, cfg = trained
        samples = load_split(cfg, "val")
        report, records = evaluate_model(result.model, samples, cfg, mode="gate_saliency")
        assert "mr" not in report
        assert "hd" in report
        # gate scores stand in for saliency
        out = result.model.forward_batch(collate(samples[:1]))
        assert records[0]["pred_saliency_scores"] == pytest.approx(
            out.non_local_weights[0, : samples[0].video.length].tolist(), abs=1e-6
        )

    def test_structural_record_contracts(self, trained):
        result, cfg = trained
        samples = load_split(cfg, "val")
        records = predict_records(result.model, samples)
        for rec, s in zip(records, samples):
            assert len(rec["pred_relevant_windows"]) == cfg.decoder.queries
            for st, ed, score in rec["pred_relevant_windows"]:
                assert -1e-6 <= st <= ed <= s.duration + 1e-6
            assert len(rec["pred_saliency_scores"]) == s.video.length

    def test_report_metrics_match_direct_metric_calls(self, trained):
        result, cfg = trained
        samples = load_split(cfg, "val")
        report, records = evaluate_model(result.model, samples, cfg)
        from vtground.metrics import evaluate_moments

        preds = [[tuple(w) for w in r["pred_relevant_windows"]] for r in records]
        gts = [
            [tuple(x * s.duration for x in center_width_to_span(m)) for m in s.gt_moments]
            for s in samples
        ]
        assert evaluate_moments(preds, gts).to_dict() == report["mr"]

    def test_missing_saliency_split_omits_hd(self, trained):
        result, cfg = trained
        samples = load_split(cfg, "val")
        for s in samples:
            s.saliency_labels = None
        report, _ = evaluate_model(result.model, samples, cfg)
        assert "hd" not in report and "mr" in report


class TestDataRoot:
    def test_relative_manifest_paths_resolve_against_env(self, tmp_path, monkeypatch):
        from test_data import BASE_RECORDS, make_manifest

        make_manifest(tmp_path, BASE_RECORDS)
        monkeypatch.setenv("VTG_DATA_ROOT", str(tmp_path))
        cfg = config_from_dict(
            {
                "data": {
                    "source": "manifest",
                    "manifest": {
                        "splits": {
                            "val": {
                                "annotations": "ann.jsonl",
                                "video_features": "video",
                                "text_features": "text",
                            }
                        }
                    },
                }
            }
        )
        samples = load_split(cfg, "val")
        assert [s.qid for s in samples] == ["q1", "q2"]

    def test_lenient_loading_collects_missing_feature_errors(self, tmp_path, monkeypatch):
        from test_data import BASE_RECORDS, make_manifest
        from vtground.harness import load_split_lenient

        make_manifest(tmp_path, BASE_RECORDS)
        (tmp_path / "video" / "v1.bin").unlink()
        monkeypatch.setenv("VTG_DATA_ROOT", str(tmp_path))
        cfg = config_from_dict(
            {
                "data": {
                    "source": "manifest",
                    "manifest": {
                        "splits": {
                            "val": {
                                "annotations": "ann.jsonl",
                                "video_features": "video",
                                "text_features": "text",
                            }
                        }
                    },
                }
            }
        )
        samples, errors = load_split_lenient(cfg, "val")
        assert [s.qid for s in samples] == ["q2"]
        assert len(errors) == 1 and "q1" in errors[0]


class TestAblate:
    def test_grid_cardinality_and_table(self, tmp_path):
        cfg = tiny_config(tmp_path / "run", epochs=1)
        result = ablate(cfg, {"gates": ["none", "both"]})
        assert len(result["rows"]) == 2
        table = render_ablation_table(result["rows"])
        assert "R1@0.5" in table and "HD mAP" in table
        assert len(table.splitlines()) == 3

    def test_two_key_grid_product(self, tmp_path):
        cfg = tiny_config(tmp_path / "run", epochs=1)
        result = ablate(cfg, {"loss.clip": [0.0, 1.0], "loss.frame": [0.0, 1.0]})
        assert len(result["rows"]) == 4

    def test_invalid_key_rejected_before_training(self, tmp_path):
        cfg = tiny_config(tmp_path / "run", epochs=1)
        with pytest.raises(ConfigError):
            ablate(cfg, {"loss.nonexistent": [1.0]})
        assert not (tmp_path / "run" / "ablate_000").exists()


class TestLossPathUniformity:
    def test_zero_weights_share_code_path(self, tmp_path):
        # identical inputs: zero-lambda run equals subtracting the weighted
        # terms from the full run, because the code path never branches
        cfg = tiny_config(tmp_path / "run")
        train_samples = load_split(cfg, "train")
        from vtground.harness import build_model, set_seeds

        set_seeds(0)
        model = build_model(cfg, train_samples[0].video.dim, train_samples[0].text.dim).eval()
        batch = collate(train_samples[:4])
        out = model.forward_batch(batch)
        full = compute_losses(model, out, batch, cfg.loss, torch.Generator().manual_seed(1))
        zero_cfg = tiny_config(tmp_path / "run2")
        zero_cfg.loss.clip = 0.0
        zero_cfg.loss.frame = 0.0
        zeroed = compute_losses(model, out, batch, zero_cfg.loss, torch.Generator().manual_seed(1))
        assert zeroed.total.item() == pytest.approx(
            full.total.item()
            - cfg.loss.clip * full.clip.item()
            - cfg.loss.frame * full.frame.item(),
            abs=1e-6,
        )
        assert zeroed.clip.item() == pytest.approx(full.clip.item(), abs=1e-9)
