"""Command-line interface tests, run in process through main()."""

import json

import numpy as np
import pytest

from fortress import model as model_io
from fortress.cli import main
from fortress.model import ModelConfig, build
from fortress.tikan import TiKANConfig

TINY_MODEL = [
    "--set", "model.levels=2",
    "--set", "model.widths=[4,8]",
    "--set", "model.input_size=16",
    "--set", "model.num_classes=3",
    "--set", "model.tikan.gamma_c=4",
]


def _synth(tmp_path, n=10):
    data = tmp_path / "data"
    rc = main(["synth", "--out", str(data), "--n", str(n),
               "--size", "16", "--classes", "3", "--seed", "0"])
    assert rc == 0
    return data


class TestSynth:
    def test_writes_dataset(self, tmp_path, capsys):
        data = _synth(tmp_path)
        out = capsys.readouterr().out
        assert "synth config" in out
        assert (data / "manifest.json").exists()
        assert len(list((data / "images").iterdir())) == 10

    def test_seed_from_environment(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("FORTRESS_SEED", "42")
        assert main(["synth", "--out", str(tmp_path / "d"), "--n", "1",
                     "--size", "16", "--classes", "3"]) == 0
        assert '"seed": 42' in capsys.readouterr().out

    def test_bad_environment_seed(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("FORTRESS_SEED", "not-a-number")
        assert main(["synth", "--out", str(tmp_path / "d"), "--n", "1",
                     "--size", "16", "--classes", "3"]) == 2

    def test_invalid_size_is_config_error(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "d"), "--n", "1",
                     "--size", "15", "--classes", "3"]) == 2


class TestTrainEvalPredict:
    def test_full_cycle(self, tmp_path, capsys):
        data = _synth(tmp_path)
        run = tmp_path / "run"
        rc = main(["train", "--data", str(data), "--out", str(run), "--seed", "0",
                   *TINY_MODEL,
                   "--set", "train.epochs=1", "--set", "train.batch=4",
                   "--set", "train.input_size=16"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "model config" in out and "train config" in out
        assert (run / "best.fkpt").exists() and (run / "last.fkpt").exists()
        with open(run / "history.json") as f:
            assert len(json.load(f)["records"]) == 1

        rc = main(["eval", "--data", str(data), "--checkpoint",
                   str(run / "best.fkpt"), "--split", "test", "--size", "16"])
        assert rc == 0
        metrics = json.loads(capsys.readouterr().out.split("metrics: ", 1)[1])
        assert set(metrics) >= {"f1_nobg", "miou_nobg", "pixel_acc"}

        image = data / "images" / "sample_00000.ppm"
        mask_out = tmp_path / "pred.pgm"
        overlay = tmp_path / "pred.ppm"
        rc = main(["predict", "--checkpoint", str(run / "best.fkpt"),
                   "--image", str(image), "--out", str(mask_out),
                   "--overlay", str(overlay)])
        assert rc == 0
        assert mask_out.exists() and overlay.exists()

    def test_unknown_config_key_rejected(self, tmp_path):
        data = _synth(tmp_path, n=2)
        rc = main(["train", "--data", str(data), "--out", str(tmp_path / "r"),
                   *TINY_MODEL, "--set", "train.bogus=1"])
        assert rc == 2

    def test_missing_dataset_is_usage_error(self, tmp_path):
        rc = main(["train", "--data", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "r"), *TINY_MODEL])
        assert rc == 2

    def test_config_file_with_overrides(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"synth": {"n_samples": 3, "size": 16,
                                             "num_classes": 3}}))
        rc = main(["synth", "--out", str(tmp_path / "d"), "--config", str(cfg),
                   "--set", "synth.n_samples=2"])
        assert rc == 0
        assert '"n_samples": 2' in capsys.readouterr().out

    def test_nan_checkpoint_is_numeric_failure(self, tmp_path):
        data = _synth(tmp_path, n=2)
        cfg = ModelConfig(num_classes=3, levels=2, widths=(4, 8), input_size=16,
                          tikan=TiKANConfig(gamma_c=4))
        model = build(cfg, seed=0)
        next(iter(model.named_parameters()))[1].data[:] = np.nan
        ckpt = tmp_path / "nan.fkpt"
        model_io.save(model, ckpt)
        rc = main(["eval", "--data", str(data), "--checkpoint", str(ckpt),
                   "--split", "train", "--size", "16"])
        assert rc == 3


class TestAnalyze:
    def test_text_report(self, capsys):
        assert main(["analyze", *TINY_MODEL]) == 0
        out = capsys.readouterr().out
        assert "twin parameter ratio" in out

    def test_json_report(self, capsys):
        assert main(["analyze", "--json", *TINY_MODEL]) == 0
        d = json.loads(capsys.readouterr().out)
        assert d["total_params"] > 0

    def test_from_checkpoint(self, tmp_path, capsys):
        cfg = ModelConfig(num_classes=3, levels=2, widths=(4, 8), input_size=16,
                          tikan=TiKANConfig(gamma_c=4))
        ckpt = tmp_path / "m.fkpt"
        model_io.save(build(cfg, seed=0), ckpt)
        assert main(["analyze", "--checkpoint", str(ckpt)]) == 0
        assert "total" in capsys.readouterr().out


class TestVerify:
    def test_selected_suites_pass(self, capsys):
        assert main(["verify", "--suite", "gate,metrics,schedule"]) == 0
        out = capsys.readouterr().out
        assert out.count("pass") == 3

    def test_unknown_suite_rejected(self):
        assert main(["verify", "--suite", "nope"]) == 2
