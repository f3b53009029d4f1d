import json
from pathlib import Path

import numpy as np
import pytest

from pdmotor.cli import main
from pdmotor.experiments import ExperimentConfig


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    rc = main(
        [
            "synth", "--patients", "3", "--minutes", "12", "--seed", "5",
            "--out", str(out), "--no-motion-fraction", "0.0",
        ]
    )
    assert rc == 0
    return out


class TestUsageErrors:
    def test_no_subcommand(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_required_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--patients", "3"])
        assert exc.value.code == 2

    def test_data_error_exit_code_1(self, tmp_path, capsys):
        rc = main(["preprocess", "--in", str(tmp_path), "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestSynthAndPreprocess:
    def test_synth_writes_stream_and_label_pairs(self, corpus_dir):
        streams = sorted(p.name for p in corpus_dir.glob("*_stream.csv"))
        labels = sorted(p.name for p in corpus_dir.glob("*_labels.csv"))
        assert len(streams) == len(labels) == 3

    def test_preprocess(self, corpus_dir, tmp_path, capsys):
        out = tmp_path / "windows"
        assert main(["preprocess", "--in", str(corpus_dir), "--out", str(out)]) == 0
        npzs = sorted(out.glob("*_windows.npz"))
        assert len(npzs) == 3
        data = np.load(npzs[0])
        assert data["values"].shape[1:] == (3600, 3)
        assert (out / "summary.csv").exists()


@pytest.fixture(scope="module")
def model_path(corpus_dir, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "m.pdw"
    rc = main(
        [
            "train", "--data", str(corpus_dir), "--out", str(path),
            "--width-scale", "256", "--epochs", "2", "--batch-size", "8", "--seed", "1",
        ]
    )
    assert rc == 0
    return path


class TestTrainAndCam:
    def test_train_saves_weights(self, model_path):
        assert model_path.exists() and model_path.stat().st_size > 0

    def test_cam_overlay(self, model_path, corpus_dir, tmp_path, capsys):
        out = tmp_path / "overlay.svg"
        rc = main(
            [
                "cam", "--model", str(model_path), "--width-scale", "256",
                "--data", str(corpus_dir), "--patient", "P00", "--minute", "0",
                "--state", "DYS", "--out", str(out),
            ]
        )
        assert rc == 0
        assert out.exists() and Path(f"{out}.csv").exists()

    def test_cam_missing_patient(self, model_path, corpus_dir, tmp_path, capsys):
        rc = main(
            [
                "cam", "--model", str(model_path), "--width-scale", "256",
                "--data", str(corpus_dir), "--patient", "NOPE", "--minute", "0",
                "--out", str(tmp_path / "x.svg"),
            ]
        )
        assert rc == 1


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    cfg = ExperimentConfig(
        kind="esb_diffpat",
        data={"source": "synthetic", "patients": 4, "minutes": 12, "seed": 3},
        net={"width_scale": 256, "epochs": 2, "batch_size": 8, "lr": 0.001},
        n_members=4,
        subset_size=2,
        aggregation="majority",
        seed=0,
    )
    cfg_path = tmp_path_factory.mktemp("cfg") / "exp.json"
    cfg_path.write_text(cfg.to_json())
    out = tmp_path_factory.mktemp("run")
    assert main(["evaluate", "--config", str(cfg_path), "--out", str(out)]) == 0
    return out


class TestEvaluateAndPostprocessing:
    def test_evaluate_reports(self, run_dir):
        assert (run_dir / "summary.json").exists()

    def test_sweep_smoothing_from_dump(self, run_dir, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        rc = main(
            [
                "sweep-smoothing", "--preds", str(run_dir / "member_predictions.csv"),
                "--kernels", "0,5,11", "--out", str(out),
            ]
        )
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "kernel_minutes,0,5,11"

    def test_confidence_report_from_dump(self, run_dir, tmp_path):
        out = tmp_path / "conf.json"
        rc = main(
            [
                "confidence-report", "--preds", str(run_dir / "member_predictions.csv"),
                "--fraction", "0.2", "--out", str(out),
            ]
        )
        assert rc == 0
        report = json.loads(out.read_text())
        assert len(report["bands"]["logit"]) == 5

    def test_bad_config_json(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text("{not json")
        rc = main(["evaluate", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
        assert rc == 1


class TestGradcheck:
    def test_passes_and_prints(self, capsys):
        rc = main(["gradcheck", "--seed", "7"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "max relative gradient error" in out
