"""CLI surface: exit codes, the fixture-to-report walkthrough, and the
artifacts each subcommand leaves behind. Commands run in process through
``main`` so coverage and tracebacks stay visible."""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from noiseprobe import load_scores
from noiseprobe.cli import build_parser, main

SUBCOMMANDS = ("score", "calibrate", "evaluate", "robustness", "sweep-lambda",
               "ablate-noise", "landscape", "make-fixture")


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    """A generated corpus plus the config file make-fixture emits."""
    out = tmp_path_factory.mktemp("demo") / "fx"
    rc = main([
        "make-fixture", "--out", str(out),
        "--n-real", "24", "--n-fake", "24",
        "--image-size", "2", "--embedding-dim", "256",
        "--k-real", "0.5", "--k-fake", "2.0",
        "--lambda", "0.1",
    ])
    assert rc == 0
    return out


class TestParser:
    def test_help_lists_every_subcommand(self):
        text = build_parser().format_help()
        for name in SUBCOMMANDS:
            assert name in text

    def test_missing_subcommand_exits_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_flag_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["score", "--bogus"])
        assert exc.value.code == 2

    def test_module_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "noiseprobe", "--help"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "score" in proc.stdout


class TestMakeFixture:
    def test_layout(self, demo, capsys):
        assert (demo / "config.toml").is_file()
        assert (demo / "manifest.csv").is_file()
        assert (demo / "manifest_real.csv").is_file()
        assert (demo / "manifest_fake.csv").is_file()
        assert len(list((demo / "images").glob("*.png"))) == 48

    def test_invalid_spec_exits_two(self, tmp_path, capsys):
        rc = main(["make-fixture", "--out", str(tmp_path / "x"), "--n-real", "0"])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


class TestFullFlow:
    def test_score_calibrate_evaluate(self, demo, capsys):
        cfg = str(demo / "config.toml")

        rc = main(["score", "--config", cfg])
        out = capsys.readouterr().out
        assert rc == 0
        assert "scored 48 samples (48 computed, 0 cached)" in out
        assert (demo / "runs" / "scores.jsonl").is_file()

        rc = main(["calibrate", "--config", cfg, "--tnr", "0.75"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "epsilon = " in out
        calib = json.loads((demo / "runs" / "calibration.json").read_text())
        assert calib["target_tnr"] == 0.75

        # no --epsilon: the calibration written above is picked up
        rc = main(["evaluate", "--config", cfg])
        out = capsys.readouterr().out
        assert rc == 0
        assert "synthetic: auc=" in out
        assert "average: auc=" in out
        report = json.loads((demo / "runs" / "report.json").read_text())
        assert report["epsilon_used"] == calib["epsilon"]
        assert (demo / "runs" / "report.csv").is_file()

    def test_evaluate_epsilon_flag(self, demo, tmp_path, capsys):
        cfg = str(demo / "config.toml")
        rc = main(["evaluate", "--config", cfg, "--out", str(tmp_path),
                   "--epsilon", "0.5"])
        assert rc == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["epsilon_used"] == 0.5

    def test_lambda_override(self, demo, tmp_path, capsys):
        cfg = str(demo / "config.toml")
        rc = main(["score", "--config", cfg, "--out", str(tmp_path),
                   "--lambda", "0.0"])
        assert rc == 0
        records = load_scores(tmp_path / "scores.jsonl")
        assert len(records) == 48
        assert all(r.similarity == 1.0 for r in records)


class TestSweepCommands:
    def test_sweep_lambda(self, demo, tmp_path, capsys):
        cfg = str(demo / "config.toml")
        rc = main(["sweep-lambda", "--config", cfg, "--out", str(tmp_path),
                   "--grid", "0.0", "0.1"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "lambda=0.0:" in out
        lines = (tmp_path / "sweep_lambda.csv").read_text().splitlines()
        assert len(lines) == 3

    def test_ablate_noise(self, demo, tmp_path, capsys):
        cfg = str(demo / "config.toml")
        rc = main(["ablate-noise", "--config", cfg, "--out", str(tmp_path)])
        out = capsys.readouterr().out
        assert rc == 0
        assert "gaussian: average AP" in out
        lines = (tmp_path / "sweep_noise_ablation.csv").read_text().splitlines()
        assert len(lines) == 5

    def test_robustness_single_kind(self, demo, tmp_path, capsys):
        cfg = str(demo / "config.toml")
        rc = main(["robustness", "--config", cfg, "--out", str(tmp_path),
                   "--kind", "gaussian_noise", "--levels", "0.02", "0.05"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "gaussian_noise x synthetic:" in out
        path = tmp_path / "sweep_gaussian_noise_synthetic.csv"
        lines = path.read_text().splitlines()
        assert len(lines) == 4  # header, baseline, two levels

    def test_levels_require_single_kind(self, demo, tmp_path, capsys):
        cfg = str(demo / "config.toml")
        rc = main(["robustness", "--config", cfg, "--out", str(tmp_path),
                   "--levels", "0.02"])
        assert rc == 2
        assert "single --kind" in capsys.readouterr().err


class TestLandscape:
    def test_fake_set_grid(self, demo, tmp_path, capsys):
        cfg = str(demo / "config.toml")
        rc = main(["landscape", "--config", cfg, "--out", str(tmp_path),
                   "--set", "fake", "--limit", "2", "--step", "0.25"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "5x5 grid over 2 fake image(s)" in out
        lines = (tmp_path / "landscape.csv").read_text().splitlines()
        assert len(lines) == 6
        assert lines[0].startswith("alpha/beta,")

    def test_missing_manifest_exits_two(self, tmp_path, capsys):
        bare = tmp_path / "bare.toml"
        bare.write_text(
            "\n".join([
                'out_dir = "o"',
                '[embedder]',
                'kind = "rff_synthetic"',
                'embedding_dim = 64',
                'input_size = 2',
                'resize_short_side = 2',
            ]) + "\n",
            encoding="utf-8",
        )
        rc = main(["landscape", "--config", str(bare), "--set", "fake"])
        assert rc == 2
        assert "requires its manifest" in capsys.readouterr().err


class TestExitCodes:
    def test_validation_error_is_two(self, capsys):
        rc = main(["score", "--config", "/nonexistent/run.toml"])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_bad_tnr_is_two(self, demo, capsys):
        cfg = str(demo / "config.toml")
        rc = main(["calibrate", "--config", cfg, "--tnr", "1.5"])
        assert rc == 2

    def test_unexpected_failure_is_one(self, demo, tmp_path, capsys):
        blocked = tmp_path / "blocked"
        blocked.write_text("", encoding="utf-8")
        cfg = str(demo / "config.toml")
        # out dir collides with an existing file: not a validation problem
        rc = main(["score", "--config", cfg, "--out", str(blocked)])
        assert rc == 1
        assert "runtime error:" in capsys.readouterr().err

    def test_failed_samples_exit_one(self, tmp_path, capsys):
        fx = tmp_path / "fx"
        rc = main([
            "make-fixture", "--out", str(fx),
            "--n-real", "3", "--n-fake", "3",
            "--image-size", "2", "--embedding-dim", "64",
        ])
        assert rc == 0
        capsys.readouterr()
        victim = next((fx / "images").glob("fake_*.png"))
        victim.write_bytes(b"junk")
        rc = main(["score", "--config", str(fx / "config.toml")])
        err = capsys.readouterr().err
        assert rc == 1
        assert "failed: " in err
        assert "1 sample(s) failed to score" in err
