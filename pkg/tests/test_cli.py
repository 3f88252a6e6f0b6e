import re
import subprocess
import sys

import numpy as np
import pytest

from bayesqda import cli
from bayesqda.io import load_checkpoint, read_feature_file


@pytest.fixture(scope="module")
def synth_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "synth.mqd"
    rc = cli.main([
        "synth", "--d", "6", "--classes", "12", "--per-class", "40",
        "--kappa", "2", "--seed", "7", "--out", str(path),
    ])
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def trained_ckpt(tmp_path_factory, synth_file):
    out = tmp_path_factory.mktemp("ckpt") / "prior.ckpt"
    rc = cli.main([
        "meta-train", "--features", str(synth_file), "--out", str(out),
        "--ways", "3", "--shots", "2", "--queries", "5", "--iters", "30",
        "--lr", "0.01", "--mode", "fb", "--seed", "0",
    ])
    assert rc == 0
    return out


class TestSynthAndInspect:
    def test_synth_writes_valid_file(self, synth_file):
        ds = read_feature_file(synth_file)
        assert ds.d == 6
        assert ds.n == 12 * 40
        assert ds.n_classes == 12

    def test_inspect_feature_file(self, synth_file, capsys):
        rc = cli.main(["inspect", str(synth_file)])
        out = capsys.readouterr().out
        assert rc == 0
        assert "d 6" in out
        assert "rows 480" in out
        assert "ok" in out

    def test_inspect_checkpoint(self, trained_ckpt, capsys):
        rc = cli.main(["inspect", str(trained_ckpt)])
        out = capsys.readouterr().out
        assert rc == 0
        assert "mode fb" in out

    def test_inspect_corrupt_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.mqd"
        bad.write_bytes(b"MQDX garbage")
        assert cli.main(["inspect", str(bad)]) == 2

    def test_synth_determinism(self, tmp_path, synth_file):
        again = tmp_path / "again.mqd"
        cli.main([
            "synth", "--d", "6", "--classes", "12", "--per-class", "40",
            "--kappa", "2", "--seed", "7", "--out", str(again),
        ])
        assert again.read_bytes() == synth_file.read_bytes()


class TestMetaTrain:
    def test_writes_checkpoint_and_log(self, trained_ckpt):
        ckpt = load_checkpoint(trained_ckpt)
        assert ckpt.prior.d == 6
        assert ckpt.mode == "fb"
        log_lines = (trained_ckpt.parent / (trained_ckpt.name + ".log")).read_text().splitlines()
        assert len(log_lines) == 30
        fields = log_lines[0].split("\t")
        assert len(fields) == 5  # iteration, loss, grad norm, kappa, nu
        int(fields[0])
        [float(v) for v in fields[1:]]

    def test_deterministic_checkpoints(self, tmp_path, synth_file):
        outs = []
        for name in ("a.ckpt", "b.ckpt"):
            out = tmp_path / name
            cli.main([
                "meta-train", "--features", str(synth_file), "--out", str(out),
                "--ways", "3", "--shots", "2", "--queries", "5", "--iters", "10",
                "--seed", "5",
            ])
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestEval:
    def test_output_format(self, synth_file, trained_ckpt, capsys):
        rc = cli.main([
            "eval", "--features", str(synth_file), "--prior", str(trained_ckpt),
            "--ways", "3", "--shots", "2", "--queries", "5",
            "--episodes", "20", "--seed", "1",
        ])
        out = capsys.readouterr().out.strip()
        assert rc == 0
        assert re.fullmatch(r"acc \d+\.\d{2} ± \d+\.\d{2}", out)

    def test_mode_override_and_workers(self, synth_file, trained_ckpt, capsys):
        args = [
            "eval", "--features", str(synth_file), "--prior", str(trained_ckpt),
            "--ways", "3", "--shots", "2", "--queries", "5",
            "--episodes", "12", "--seed", "1", "--mode", "map",
        ]
        rc = cli.main(args)
        first = capsys.readouterr().out
        rc2 = cli.main(args + ["--workers", "3"])
        second = capsys.readouterr().out
        assert rc == rc2 == 0
        assert first == second


class TestEvalIncremental:
    def test_session_lines(self, synth_file, trained_ckpt, capsys):
        rc = cli.main([
            "eval-incremental", "--features", str(synth_file),
            "--prior", str(trained_ckpt), "--base-ways", "4", "--base-shots", "10",
            "--sessions", "2", "--session-ways", "2", "--session-shots", "5",
            "--test-per-class", "10", "--seed", "0",
        ])
        out = capsys.readouterr().out.strip().splitlines()
        assert rc == 0
        assert len(out) == 3
        assert out[0].startswith("session 0 (4 ways)")
        assert out[2].startswith("session 2 (8 ways)")


class TestCalibrate:
    def test_prints_temperature_and_ece(self, synth_file, trained_ckpt, tmp_path, capsys):
        report = tmp_path / "bins.tsv"
        rc = cli.main([
            "calibrate", "--features", str(synth_file), "--prior", str(trained_ckpt),
            "--ways", "3", "--shots", "2", "--queries", "5", "--episodes", "15",
            "--seed", "2", "--report", str(report),
        ])
        out = capsys.readouterr().out
        assert rc == 0
        assert "temperature" in out
        assert "ece" in out
        assert report.read_text().startswith("# bin")


class TestErrorsAndConfig:
    def test_usage_error_exit_1(self, capsys):
        assert cli.main(["eval", "--bogus-flag"]) == 1
        assert cli.main(["no-such-command"]) == 1
        assert cli.main(["synth", "--d", "2"]) == 1  # missing required flags

    def test_data_error_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.mqd"
        bad.write_bytes(b"not a feature file at all")
        rc = cli.main([
            "eval", "--features", str(bad), "--prior", str(bad),
        ])
        assert rc == 2
        assert "error" in capsys.readouterr().err

    def test_missing_file_exit_2(self, tmp_path):
        rc = cli.main([
            "inspect", str(tmp_path / "missing.mqd"),
        ])
        assert rc == 2

    def test_config_file_defaults_and_precedence(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("d=4\nclasses=5\nper-class=30\nseed=9\n")
        out1 = tmp_path / "one.mqd"
        rc = cli.main(["synth", "--config", str(cfg), "--out", str(out1)])
        assert rc == 0
        ds = read_feature_file(out1)
        assert ds.d == 4 and ds.n == 150

        # explicit flag overrides the config value
        out2 = tmp_path / "two.mqd"
        rc = cli.main([
            "synth", "--config", str(cfg), "--out", str(out2), "--per-class", "10",
        ])
        assert rc == 0
        assert read_feature_file(out2).n == 50


def test_console_script_installed(tmp_path):
    result = subprocess.run(
        [sys.executable, "-m", "bayesqda.cli", "synth", "--d", "2", "--classes", "3",
         "--per-class", "4", "--out", str(tmp_path / "x.mqd")],
        capture_output=True, text=True,
    )
    assert result.returncode == 0, result.stderr
