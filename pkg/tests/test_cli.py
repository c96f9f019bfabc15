import json
import os

import numpy as np
import pytest

from aortaelast import cli
from aortaelast.datagen import GridSample


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_usage_error_exits_1(capsys):
    code, _, err = run_cli(capsys, "gen-dataset")  # missing required --out
    assert code == 1
    assert "error" in err


def test_unknown_command_exits_1(capsys):
    code, _, err = run_cli(capsys, "frobnicate")
    assert code == 1


def test_runtime_error_exits_2_with_json_diagnostic(capsys):
    code, _, err = run_cli(capsys, "metrics",
                           "--truth", "/nonexistent/a.egrid",
                           "--pred", "/nonexistent/b.egrid")
    assert code == 2
    diag = json.loads(err)
    assert "error" in diag and "message" in diag


def test_gen_dataset_writes_files_and_manifest(tmp_path, capsys):
    out = tmp_path / "ds"
    code, stdout, _ = run_cli(capsys, "gen-dataset", "--seed", "3",
                              "--train", "2", "--val", "1", "--test", "1",
                              "--out", str(out), "--target-h", "4e-3")
    assert code == 0
    status = json.loads(stdout)
    assert status["status"] == "ok"
    with open(out / "manifest.json") as fh:
        manifest = json.load(fh)
    files = [f for split in manifest["files"].values() for f in split]
    assert len(files) == 4
    for f in files:
        assert (out / f).exists()
    assert (out / "gen-dataset_config.json").exists()


def test_config_file_defaults_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 9, "train": 1, "val": 1, "test": 0,
                               "target-h": 4e-3}))
    out = tmp_path / "ds"
    code, _, _ = run_cli(capsys, "--config", str(cfg), "gen-dataset",
                         "--out", str(out), "--val", "2")
    assert code == 0
    with open(out / "gen-dataset_config.json") as fh:
        eff = json.load(fh)
    assert eff["seed"] == 9        # from the config file
    assert eff["val"] == 2         # explicit flag wins
    assert eff["test"] == 0


def test_phantom_then_metrics_round_trip(tmp_path, capsys):
    out = tmp_path / "ph"
    code, stdout, _ = run_cli(capsys, "digital-phantom", "--contrast", "2.0",
                              "--out", str(out), "--target-h", "4e-3")
    assert code == 0
    truth = out / "truth.egrid"
    assert truth.exists() and (out / "mesh.json").exists()

    report_path = tmp_path / "metrics.json"
    code, stdout, _ = run_cli(capsys, "metrics", "--truth", str(truth),
                              "--pred", str(truth), "--out", str(report_path))
    assert code == 0
    report = json.loads(stdout)
    assert report["nmse"] == 0.0
    assert report["dsc"] == 1.0
    assert report["eta"] == pytest.approx(2.0, rel=1e-5)
    assert json.loads(report_path.read_text()) == report


def test_reconstruct_command_round_trip(tmp_path, capsys):
    out = tmp_path / "ph"
    run_cli(capsys, "digital-phantom", "--contrast", "1.0",
            "--out", str(out), "--target-h", "5e-3")
    rec = tmp_path / "rec"
    code, stdout, _ = run_cli(capsys, "reconstruct",
                              "--mesh", str(out / "mesh.json"),
                              "--displacement", str(out / "displacement.field"),
                              "--pulse-pressure", "5330",
                              "--outer-iterations", "3",
                              "--out", str(rec))
    assert code == 0
    sample = GridSample.load(rec / "modulus.egrid")
    assert sample.provenance == "registered"
    assert np.all(sample.modulus[sample.mask] > 0)
    with open(rec / "convergence.json") as fh:
        conv = json.load(fh)
    outer = [rec for rec in conv["objective_history"] if "outer" in rec]
    assert len(outer) == 3


def test_render_report_writes_png(tmp_path, capsys):
    out = tmp_path / "ph"
    run_cli(capsys, "digital-phantom", "--contrast", "2.0",
            "--out", str(out), "--target-h", "5e-3")
    png = tmp_path / "fig.png"
    code, stdout, _ = run_cli(capsys, "render-report",
                              "--truth", str(out / "truth.egrid"),
                              "--out", str(png))
    assert code == 0
    assert png.stat().st_size > 0
