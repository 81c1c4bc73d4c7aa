import json

import pytest

from stpgsr.cli import main
from stpgsr.data import read_matrix


def write_config(path, **overrides):
    cfg = {
        "samples": 6,
        "n_s": 10,
        "n_t": 14,
        "noise": 0.05,
        "modules": 3,
        "seed": 7,
        "learning_rate": 0.005,
        "epochs": 2,
        "accumulation_batch": 16,
        "model_kind": "stp_gsr",
        "fold_count": 2,
    }
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def dataset_dir(tmp_path):
    cfg = write_config(tmp_path / "config.json")
    out = tmp_path / "data"
    assert main(["gen-data", "--config", str(cfg), "--out", str(out)]) == 0
    return out


class TestGenData:
    def test_writes_expected_files(self, tmp_path):
        cfg = write_config(tmp_path / "config.json", samples=4)
        out = tmp_path / "data"
        assert main(["gen-data", "--config", str(cfg), "--out", str(out)]) == 0
        csvs = sorted(p.name for p in out.glob("*.csv"))
        assert len(csvs) == 8  # one LR + one HR per sample
        assert (out / "manifest.json").exists()
        assert (out / "resolved_config.json").exists()
        assert (out / "inputs.sha256").exists()

    def test_default_desk_config_writes_sixty_files(self, tmp_path):
        out = tmp_path / "desk"
        assert main(["gen-data", "--out", str(out), "--seed", "1"]) == 0
        assert len(list(out.glob("*.csv"))) == 60  # 30 LR + 30 HR pairs
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["n_s"] == 20 and manifest["n_t"] == 30
        assert manifest["seed"] == 1  # flag overrides the default

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path / "config.json", samples=2)
        out1, out2 = tmp_path / "d1", tmp_path / "d2"
        assert main(["gen-data", "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["gen-data", "--config", str(cfg), "--out", str(out2)]) == 0
        for p in sorted(out1.glob("*.csv")):
            assert p.read_bytes() == (out2 / p.name).read_bytes()

    def test_invalid_sizes_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "config.json", n_s=14, n_t=14)
        assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
        assert "n_s" in capsys.readouterr().err

    def test_bad_json_exit_2(self, tmp_path):
        cfg = tmp_path / "broken.json"
        cfg.write_text("{nope")
        assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2

    def test_unknown_key_exit_2(self, tmp_path):
        cfg = tmp_path / "extra.json"
        cfg.write_text(json.dumps({"samples": 2, "n_s": 4, "n_t": 6, "typo_key": 1}))
        assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2


class TestTrain:
    def test_full_run_writes_artifacts(self, tmp_path, dataset_dir, capsys):
        cfg = write_config(tmp_path / "config.json")
        out = tmp_path / "run"
        rc = main([
            "train", "--config", str(cfg), "--data", str(dataset_dir / "manifest.json"),
            "--out", str(out),
        ])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert set(report["aggregate"]) == {
            "degree", "betweenness", "closeness", "eigenvector", "clustering",
            "participation", "small_worldness", "edge_mae",
        }
        assert (out / "fold0.checkpoint.json").exists()
        assert (out / "fold1.checkpoint.json").exists()
        assert (out / "fold0.history.csv").exists()
        assert (out / "report.csv").exists()
        stdout = capsys.readouterr().out
        assert "0.174" in stdout  # reference parameter counts are printed

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_4(self, tmp_path, dataset_dir):
        cfg = write_config(tmp_path / "config.json", learning_rate=1e200, epochs=3)
        rc = main([
            "train", "--config", str(cfg), "--data", str(dataset_dir / "manifest.json"),
            "--out", str(tmp_path / "div"),
        ])
        assert rc == 4

    def test_missing_manifest_exit_3(self, tmp_path):
        cfg = write_config(tmp_path / "config.json")
        rc = main([
            "train", "--config", str(cfg), "--data", str(tmp_path / "nope.json"),
            "--out", str(tmp_path / "run"),
        ])
        assert rc == 3

    def test_bad_model_kind_exit_2(self, tmp_path, dataset_dir):
        cfg = write_config(tmp_path / "config.json", model_kind="nope")
        rc = main([
            "train", "--config", str(cfg), "--data", str(dataset_dir / "manifest.json"),
            "--out", str(tmp_path / "run"),
        ])
        assert rc == 2


class TestEval:
    @pytest.fixture
    def trained(self, tmp_path, dataset_dir):
        cfg = write_config(tmp_path / "config.json")
        out = tmp_path / "run"
        assert main([
            "train", "--config", str(cfg), "--data", str(dataset_dir / "manifest.json"),
            "--out", str(out),
        ]) == 0
        return out

    def test_eval_reproduces_training_fold_metrics(self, tmp_path, dataset_dir, trained):
        out = tmp_path / "eval"
        rc = main([
            "eval", "--checkpoint", str(trained / "fold0.checkpoint.json"),
            "--data", str(dataset_dir / "manifest.json"), "--out", str(out),
        ])
        assert rc == 0
        train_report = json.loads((trained / "report.json").read_text())
        eval_report = json.loads((out / "report.json").read_text())
        fold0 = train_report["folds"][0]
        eval_by_sample = {
            e["sample"]: e["metrics"] for e in eval_report["folds"][0]["per_sample"]
        }
        for entry in fold0["per_sample"]:
            assert eval_by_sample[entry["sample"]] == entry["metrics"]

    def test_writes_one_prediction_per_sample(self, tmp_path, dataset_dir, trained):
        out = tmp_path / "eval2"
        assert main([
            "eval", "--checkpoint", str(trained / "fold0.checkpoint.json"),
            "--data", str(dataset_dir / "manifest.json"), "--out", str(out),
        ]) == 0
        preds = sorted(out.glob("pred_*.csv"))
        assert len(preds) == 6
        read_matrix(preds[0])  # predictions are valid connectomes

    def test_size_mismatch_exit_2(self, tmp_path, trained):
        other_cfg = write_config(tmp_path / "other.json", n_s=8, n_t=12, samples=2)
        other_data = tmp_path / "other_data"
        assert main(["gen-data", "--config", str(other_cfg), "--out", str(other_data)]) == 0
        rc = main([
            "eval", "--checkpoint", str(trained / "fold0.checkpoint.json"),
            "--data", str(other_data / "manifest.json"), "--out", str(tmp_path / "e"),
        ])
        assert rc == 2

    def test_missing_checkpoint_exit_3(self, tmp_path, dataset_dir):
        rc = main([
            "eval", "--checkpoint", str(tmp_path / "missing.json"),
            "--data", str(dataset_dir / "manifest.json"), "--out", str(tmp_path / "e"),
        ])
        assert rc == 3


class TestDualInfo:
    def test_reference_scale(self, capsys):
        assert main(["dual-info", "--n", "268"]) == 0
        out = capsys.readouterr().out
        assert "35778" in out
        assert "532" in out
        assert "1.487%" in out

    def test_small_case(self, capsys):
        assert main(["dual-info", "--n", "4"]) == 0
        out = capsys.readouterr().out
        assert "6" in out and "12" in out

    def test_degenerate_two_nodes(self, capsys):
        assert main(["dual-info", "--n", "2"]) == 0
        out = capsys.readouterr().out
        assert "1" in out

    def test_invalid_exit_2(self):
        assert main(["dual-info", "--n", "1"]) == 2


class TestGradcheckCommand:
    def test_default_suite_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "threshold" in out
        assert "all" in out and "passed" in out

    def test_full_flag_adds_model_checks_and_failures_exit_5(self, monkeypatch, capsys):
        from stpgsr import cli
        from stpgsr.gradcheck import CheckResult

        monkeypatch.setattr(
            cli, "run_model_checks", lambda: [CheckResult("model/fake", 1.0, 1e-4)]
        )
        assert main(["gradcheck", "--full"]) == 5
        out = capsys.readouterr().out
        assert "model/fake" in out
        assert "worst is model/fake" in out
