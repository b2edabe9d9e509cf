#!/usr/bin/env python3
"""
End-to-end tests of the rmt-prune command line, in process and as a subprocess
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.cli import main
from src.matrixio import load_checkpoint, save_checkpoint, write_matrix
from src.nn_core import init_mlp, model_from_checkpoint, model_to_checkpoint

ROOT = Path(__file__).resolve().parent.parent


def read_manifest(primary: Path) -> dict:
    return json.loads(primary.with_name(primary.name + ".manifest.json").read_text())


@pytest.fixture
def noise_matrix(tmp_path):
    path = tmp_path / "noise.pmat"
    write_matrix(np.random.default_rng(0).standard_normal((200, 100)), path)
    return path


class TestUsage:
    def test_no_command(self):
        assert main([]) == 1

    def test_unknown_command(self, capsys):
        assert main(["compress"]) == 1
        assert "error" in capsys.readouterr().err

    def test_missing_required_flag(self, noise_matrix):
        assert main(["analyze", "--matrix", str(noise_matrix)]) == 1

    def test_bad_log_level(self, noise_matrix, tmp_path):
        assert main(["--log-level", "chatty", "analyze", "--matrix", str(noise_matrix),
                     "--out", str(tmp_path / "m.json")]) == 1

    def test_parse_error_writes_manifest_next_to_named_output(self, tmp_path):
        out = tmp_path / "metrics.json"
        assert main(["analyze", "--out", str(out)]) == 1
        manifest = read_manifest(out)
        assert manifest["subcommand"] == "analyze"
        assert manifest["error"]["type"] == "UsageError"
        assert manifest["error"]["exit_code"] == 1
        assert not out.exists()

    def test_parse_error_with_inline_output_flag(self, tmp_path):
        out = tmp_path / "spikes.csv"
        assert main(["spiked", "--seed", "zero", f"--out={out}"]) == 1
        assert read_manifest(out)["error"]["type"] == "UsageError"

    def test_parse_error_without_output_writes_nothing(self, noise_matrix, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        before = sorted(tmp_path.iterdir())
        assert main(["analyze", "--matrix", str(noise_matrix)]) == 1
        assert sorted(tmp_path.iterdir()) == before

    def test_show_config(self, capsys):
        assert main(["--show-config"]) == 0
        assert "RMT Spectral Pruning Toolkit" in capsys.readouterr().out


class TestAnalyze:
    def test_matrix_report_and_manifest(self, noise_matrix, tmp_path):
        out = tmp_path / "metrics.json"
        hist = tmp_path / "hist"
        assert main(["analyze", "--matrix", str(noise_matrix), "--out", str(out),
                     "--histogram-dir", str(hist), "--bins", "20"]) == 0

        layer = json.loads(out.read_text())["layers"][0]
        assert layer["n_rows"] == 200 and layer["n_cols"] == 100
        assert layer["accepted"] is True
        assert layer["gamma"] >= 0.97
        assert len(pd.read_csv(hist / "layer0_esd.csv")) == 20

        manifest = read_manifest(out)
        assert manifest["subcommand"] == "analyze"
        assert manifest["error"] is None
        assert str(out) in manifest["outputs"]
        assert manifest["config"]["BemaSettings"]["alpha"] == 0.25

    def test_checkpoint_csv_report(self, tmp_path):
        ckpt = tmp_path / "model.ckpt"
        save_checkpoint(model_to_checkpoint(init_mlp([64, 48, 40, 10], seed=1)), ckpt)
        out = tmp_path / "metrics.csv"
        assert main(["analyze", "--model", str(ckpt), "--out", str(out)]) == 0
        frame = pd.read_csv(out)
        assert list(frame["layer"]) == [0, 1, 2]
        assert list(frame["n_rows"]) == [48, 40, 10]
        assert frame["gamma"].between(0.0, 1.0).all()

    def test_missing_input_still_writes_manifest(self, tmp_path):
        out = tmp_path / "metrics.json"
        assert main(["analyze", "--matrix", str(tmp_path / "absent.pmat"), "--out", str(out)]) == 1
        manifest = read_manifest(out)
        assert manifest["error"]["exit_code"] == 1
        assert not out.exists()

    def test_invalid_setting(self, noise_matrix, tmp_path):
        out = tmp_path / "metrics.json"
        assert main(["analyze", "--matrix", str(noise_matrix), "--out", str(out), "--set", "alpha=0.7"]) == 1
        assert read_manifest(out)["error"]["type"] == "ParameterError"
        assert main(["analyze", "--matrix", str(noise_matrix), "--out", str(out), "--set", "gamma=1"]) == 1

    def test_bad_report_suffix(self, noise_matrix, tmp_path):
        assert main(["analyze", "--matrix", str(noise_matrix), "--out", str(tmp_path / "metrics.txt")]) == 1


class TestTrainAndPrune:
    def test_train(self, idx_files, tmp_path):
        out, log = tmp_path / "net.ckpt", tmp_path / "log.csv"
        code = main(["train", "--data", str(idx_files[0]), str(idx_files[1]), "--topology", "16,8,10",
                     "--seed", "3", "--set", "epochs=2", "--set", "learning_rate=0.05",
                     "--out", str(out), "--log", str(log)])
        assert code == 0
        assert len(pd.read_csv(log)) == 2
        model = model_from_checkpoint(load_checkpoint(out))
        assert model.topology == [16, 8, 10]
        manifest = read_manifest(out)
        assert manifest["seeds"] == [3]
        assert manifest["config"]["TrainConfig"]["epochs"] == 2

    def test_train_needs_seed(self, idx_files, tmp_path):
        assert main(["train", "--data", str(idx_files[0]), str(idx_files[1]), "--topology", "16,8,10",
                     "--out", str(tmp_path / "net.ckpt"), "--log", str(tmp_path / "log.csv")]) == 1

    def test_topology_mismatch(self, idx_files, tmp_path):
        out = tmp_path / "net.ckpt"
        assert main(["train", "--data", str(idx_files[0]), str(idx_files[1]), "--topology", "10,8,10",
                     "--seed", "0", "--out", str(out), "--log", str(tmp_path / "log.csv")]) == 1
        assert read_manifest(out)["error"]["type"] == "ContractError"

    def test_prune(self, idx_files, tmp_path):
        ckpt = tmp_path / "dense.ckpt"
        save_checkpoint(model_to_checkpoint(init_mlp([16, 40, 40, 10], seed=2)), ckpt)
        out, report = tmp_path / "pruned.ckpt", tmp_path / "cycles.csv"
        code = main(["prune", "--model", str(ckpt), "--out", str(out), "--report", str(report),
                     "--eval-data", str(idx_files[0]), str(idx_files[1]), "--set", "n_cycles=2"])
        assert code == 0
        pruned = model_from_checkpoint(load_checkpoint(out))
        dense = model_from_checkpoint(load_checkpoint(ckpt))
        assert pruned.nnz() < dense.nnz()
        assert set(pd.read_csv(report)["cycle"]) == {1, 2}

    def test_finetune_needs_seed(self, idx_files, tmp_path):
        ckpt = tmp_path / "dense.ckpt"
        save_checkpoint(model_to_checkpoint(init_mlp([16, 12, 10], seed=0)), ckpt)
        report = tmp_path / "cycles.csv"
        code = main(["prune", "--model", str(ckpt), "--out", str(tmp_path / "p.ckpt"), "--report", str(report),
                     "--finetune-data", str(idx_files[0]), str(idx_files[1]), "--set", "n_cycles=1"])
        assert code == 1
        assert read_manifest(tmp_path / "p.ckpt")["error"]["type"] == "UsageError"


class TestExperiments:
    def test_spiked(self, tmp_path):
        out, shrink = tmp_path / "spikes.csv", tmp_path / "shrink.csv"
        code = main(["spiked", "--seed", "0", "--n-seeds", "2", "--out", str(out),
                     "--set", "n_rows=60", "--set", "n_cols=40", "--set", "planted_sigmas=2,3",
                     "--shrink-grid", "1,0.5,0", "--shrink-out", str(shrink)])
        assert code == 0
        frame = pd.read_csv(out)
        assert len(frame) == 4
        assert sorted(frame["seed"].unique()) == [0, 1]
        assert set(pd.read_csv(shrink)["gamma"]) == {0.0, 0.5, 1.0}
        assert read_manifest(out)["seeds"] == [0, 1]

    def test_spiked_needs_dimensions(self, tmp_path):
        assert main(["spiked", "--seed", "0", "--out", str(tmp_path / "spikes.csv")]) == 1

    def test_regress(self, tmp_path):
        out = tmp_path / "mse.csv"
        code = main(["regress", "--seed", "0", "--out", str(out), "--spectra-dir", str(tmp_path / "spectra"),
                     "--set", "domain=-5,5", "--set", "n_targets=10",
                     "--set", "ridge_lambda=1", "--set", "lasso_lambda=30"])
        assert code == 0
        frame = pd.read_csv(out)
        assert list(frame["estimator"]) == ["none", "ridge", "lasso", "pruning"]
        assert (tmp_path / "spectra" / "spectrum_lasso.csv").exists()

    def test_verify_borell_tis(self, tmp_path):
        out = tmp_path / "bt.csv"
        assert main(["verify", "--suite", "borell-tis", "--seed", "1", "--out", str(out),
                     "--set", "bt_n=500", "--set", "bt_draws=200"]) == 0
        row = pd.read_csv(out).iloc[0]
        assert row["empirical_rate"] <= row["bound"]

    def test_verify_needs_dataset(self, tmp_path):
        out = tmp_path / "scaling.csv"
        assert main(["verify", "--suite", "an-scaling", "--seed", "0", "--out", str(out)]) == 1
        assert read_manifest(out)["error"]["exit_code"] == 1


class TestReproducibility:
    RUNS = {
        "spiked": ["spiked", "--seed", "3", "--n-seeds", "2",
                   "--set", "n_rows=60", "--set", "n_cols=40", "--set", "planted_sigmas=2,3"],
        "regress": ["regress", "--seed", "3", "--set", "domain=-5,5", "--set", "n_targets=10"],
        "borell-tis": ["verify", "--suite", "borell-tis", "--seed", "3", "--set", "bt_n=300", "--set", "bt_draws=100"],
    }

    @pytest.mark.parametrize("name", sorted(RUNS))
    def test_rerun_gives_identical_report(self, name, tmp_path):
        first, second = tmp_path / "first.csv", tmp_path / "second.csv"
        for out in (first, second):
            assert main(self.RUNS[name] + ["--out", str(out)]) == 0
        assert first.read_bytes() == second.read_bytes()

    def test_rerun_gives_identical_analysis(self, noise_matrix, tmp_path):
        first, second = tmp_path / "first.json", tmp_path / "second.json"
        for out in (first, second):
            assert main(["analyze", "--matrix", str(noise_matrix), "--out", str(out)]) == 0
        assert first.read_bytes() == second.read_bytes()


class TestSubprocess:
    def run(self, *args):
        return subprocess.run([sys.executable, str(ROOT / "main.py"), *args],
                              capture_output=True, text=True, timeout=120, cwd=ROOT)

    def test_show_config(self):
        result = self.run("--no-color", "--show-config")
        assert result.returncode == 0
        assert "RMT Spectral Pruning Toolkit" in result.stdout

    def test_usage_error_exit_code(self):
        result = self.run("analyze")
        assert result.returncode == 1
        assert "required" in result.stderr

    def test_analyze(self, noise_matrix, tmp_path):
        out = tmp_path / "metrics.csv"
        result = self.run("--log-level", "WARNING", "analyze", "--matrix", str(noise_matrix), "--out", str(out))
        assert result.returncode == 0, result.stderr
        assert "analyze finished" in result.stdout
        assert out.exists()
