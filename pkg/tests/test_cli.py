import json
import subprocess
import sys

import pytest

from softproprio.cli import main


def write(path, data):
    path.write_text(json.dumps(data))
    return path


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A short strip scenario, its recording and a regressor trained on it."""
    root = tmp_path_factory.mktemp("cli")
    write(root / "scenario.json", {"version": 1, "scenario": {
        "extends": "preset:strip", "schedule": {"duration_s": 1.0}}})
    assert main(["simulate", "--config", str(root / "scenario.json"), "--out", str(root / "rec")]) == 0
    write(root / "train.json", {"version": 1, "preset": "strip", "train": ["rec"], "validation": ["rec"],
                                "epochs": 2, "seed": 0})
    assert main(["train", "--config", str(root / "train.json"), "--out", str(root / "model")]) == 0
    write(root / "estimate.json", {"version": 1, "recording": "rec", "regressor": "model/regressor.json"})
    return root


class TestSimulate:
    def test_frame_count_and_manifest(self, workdir):
        lines = (workdir / "rec" / "recording.csv").read_text().splitlines()
        assert len(lines) == 1 + 31
        manifest = json.loads((workdir / "rec" / "manifest.json").read_text())
        assert manifest["frames"] == 31 and manifest["seed"] == 1
        assert manifest["scenario"]["schedule"]["duration_s"] == 1.0

    def test_seed_override(self, workdir, tmp_path):
        assert main(["simulate", "--config", str(workdir / "scenario.json"), "--seed", "9",
                     "--out", str(tmp_path / "r")]) == 0
        assert json.loads((tmp_path / "r" / "manifest.json").read_text())["seed"] == 9

    def test_bad_config_exits_1(self, tmp_path, capsys):
        cfg = write(tmp_path / "bad.json", {"version": 1, "scenario": {"extends": "preset:strip", "device": "x"}})
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
        assert "error: code=VALIDATION" in capsys.readouterr().err

    def test_wrong_version_exits_1(self, tmp_path):
        cfg = write(tmp_path / "v.json", {"version": 7})
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1

    def test_missing_file_exits_1(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "none.json")]) == 1


class TestTrainEstimate:
    def test_train_outputs(self, workdir):
        model = workdir / "model"
        assert {p.name for p in model.iterdir()} >= {"dataset.csv", "dataset.json", "regressor.json",
                                                     "training.json"}
        training = json.loads((model / "training.json").read_text())
        assert training["window"] == 5 and len(training["loss_curve"]) == 2

    def test_estimate_reports_all_markers(self, workdir, tmp_path):
        assert main(["estimate", "--config", str(workdir / "estimate.json"), "--out", str(tmp_path)]) == 0
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert len(metrics["marker_error_pct"]) == 11
        assert metrics["shape_source"] == "learned"
        assert metrics["excluded_markers"] == [0]
        header = (tmp_path / "traces.csv").read_text().splitlines()[0]
        assert header.startswith("t,measured_force_n,estimated_force_n")

    def test_exact_shape_needs_no_regressor(self, workdir, tmp_path):
        cfg = write(tmp_path / "e.json", {"version": 1, "recording": str(workdir / "rec")})
        assert main(["estimate", "--config", str(cfg), "--exact-shape", "--out", str(tmp_path / "o")]) == 0
        assert json.loads((tmp_path / "o" / "metrics.json").read_text())["shape_source"] == "exact"
        assert main(["estimate", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 1

    def test_estimate_is_byte_identical(self, workdir, tmp_path):
        for name in ("a", "b"):
            assert main(["estimate", "--config", str(workdir / "estimate.json"), "--out", str(tmp_path / name)]) == 0
        for f in ("metrics.json", "traces.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_train_without_training_split(self, workdir, tmp_path):
        cfg = write(workdir / "t2.json", {"version": 1, "preset": "strip", "validation": ["rec"]})
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 1


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    root = tmp_path_factory.mktemp("sweep")
    write(root / "scenario.json", {"version": 1, "scenario": {
        "extends": "preset:finger",
        "schedule": {"frames": [{"t_s": 0.0, "pressure_kpa": 0.5, "force_n": [0.0]},
                                {"t_s": 0.1, "pressure_kpa": 2.0, "force_n": [0.0]}]}}})
    assert main(["simulate", "--config", str(root / "scenario.json"), "--out", str(root / "sweep")]) == 0
    return root


class TestCalibrate:
    def test_young_modulus(self, sweep, tmp_path):
        cfg = write(sweep / "cal.json", {"version": 1, "kind": "young_modulus", "sweep": "sweep",
                                         "interval_pa": [0.5e6, 3e6], "relative_tolerance": 0.02})
        assert main(["calibrate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        result = json.loads((tmp_path / "calibration.json").read_text())
        assert result["kind"] == "young_modulus"
        assert result["young_modulus_pa"] == pytest.approx(1.37e6, rel=0.05)
        assert len(result["trace"]) > 5

    def test_no_minimum_exits_2(self, sweep, tmp_path, capsys):
        cfg = write(sweep / "cal2.json", {"version": 1, "kind": "young_modulus", "sweep": "sweep",
                                          "interval_pa": [2e6, 3e6], "relative_tolerance": 0.1})
        assert main(["calibrate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        assert "code=NO_MINIMUM_IN_INTERVAL" in capsys.readouterr().err

    def test_unknown_kind(self, sweep, tmp_path):
        cfg = write(sweep / "cal3.json", {"version": 1, "kind": "poisson"})
        assert main(["calibrate", "--config", str(cfg), "--out", str(tmp_path)]) == 1


class TestUsage:
    def test_no_subcommand(self, capsys):
        assert main([]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert main(["explode"]) == 1
        assert "code=USAGE" in capsys.readouterr().err

    def test_help_exits_0(self):
        assert main(["--help"]) == 0

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "softproprio", "simulate"], capture_output=True, text=True)
        assert out.returncode == 1
        assert "--config" in out.stderr
