"""Command line behavior, driven in-process through main(argv)."""

import csv
import os

import numpy as np
import pytest

from conftest import make_smooth_image
from cycsr.cli import main
from cycsr.imaging import load_image, save_image


@pytest.fixture(scope="module")
def hr_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("hr")
    for i in range(3):
        save_image(make_smooth_image(64, 64, seed=500 + i), d / f"shot{i}.png")
    return str(d)


def test_degrade_writes_pairs_and_manifest(hr_dir, tmp_path, capsys):
    out = tmp_path / "lr"
    rc = main(["degrade", hr_dir, str(out), "--scale", "4", "--sigma", "2.0", "--seed", "5"])
    assert rc == 0
    assert "wrote 3 LR images" in capsys.readouterr().out
    for i in range(3):
        assert load_image(out / f"shot{i}_lr.png").shape == (3, 16, 16)
    with open(out / "manifest.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 3
    assert rows[0]["scale"] == "4"
    assert rows[0]["sigma"] == "2.0"
    assert rows[0]["jpeg_q"] == "off"
    assert [r["seed"] for r in rows] == ["5", "6", "7"]


def test_degrade_rerun_is_byte_identical(hr_dir, tmp_path):
    out = tmp_path / "lr"
    assert main(["degrade", hr_dir, str(out), "--sigma", "3.5", "--jpeg-q", "80"]) == 0
    first = {p: (out / p).read_bytes() for p in os.listdir(out)}
    assert main(["degrade", hr_dir, str(out), "--sigma", "3.5", "--jpeg-q", "80"]) == 0
    second = {p: (out / p).read_bytes() for p in os.listdir(out)}
    assert first == second


def test_full_pipeline_smoke(hr_dir, tmp_path, capsys):
    lr = tmp_path / "lr"
    run = tmp_path / "run"
    sr = tmp_path / "sr"
    assert main(["degrade", hr_dir, str(lr), "--sigma", "2.0"]) == 0

    rc = main(
        [
            "train",
            "--hr-dir", hr_dir,
            "--lr-dir", str(lr),
            "--out-dir", str(run),
            "--tiny",
            "--iters", "4",
            "--batch-size", "2",
            "--lr-patch", "16",
            "--seed", "3",
        ]
    )
    assert rc == 0
    out_text = capsys.readouterr().out
    assert "final checkpoint:" in out_text
    final = run / "ckpt_final.ckpt"
    assert final.exists() and (run / "loss_log.csv").exists()

    rc = main(["infer", str(lr), str(sr), "--checkpoint", str(final)])
    assert rc == 0
    assert sorted(os.listdir(sr)) == ["shot0.png", "shot1.png", "shot2.png"]
    assert load_image(sr / "shot0.png").shape == (3, 64, 64)

    csv_path = tmp_path / "metrics.csv"
    rc = main(["evaluate", str(sr), hr_dir, "--csv", str(csv_path)])
    assert rc == 0
    table = capsys.readouterr().out
    assert "mean" in table
    with open(csv_path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["name"] for r in rows] == ["shot0.png", "shot1.png", "shot2.png"]
    assert all(float(r["psnr"]) > 5.0 for r in rows)


def test_single_file_infer_with_ensemble(hr_dir, tmp_path, capsys):
    lr_file = tmp_path / "one_lr.png"
    save_image(make_smooth_image(12, 12, seed=700), lr_file)
    run = tmp_path / "run"
    lrd = tmp_path / "lrd"
    assert main(["degrade", hr_dir, str(lrd)]) == 0
    assert (
        main(
            [
                "train",
                "--hr-dir", hr_dir,
                "--lr-dir", str(lrd),
                "--out-dir", str(run),
                "--tiny",
                "--iters", "2",
                "--batch-size", "2",
                "--lr-patch", "16",
            ]
        )
        == 0
    )
    out_file = tmp_path / "one_sr.png"
    rc = main(
        ["infer", str(lr_file), str(out_file), "--checkpoint", str(run / "ckpt_final.ckpt"), "--ensemble"]
    )
    assert rc == 0
    assert "wrote" in capsys.readouterr().out
    assert load_image(out_file).shape == (3, 48, 48)


def test_evaluate_identical_directories(hr_dir, capsys):
    rc = main(["evaluate", hr_dir, hr_dir])
    assert rc == 0
    out = capsys.readouterr().out
    assert "1.0000" in out  # ssim of an image with itself
    assert "excluded" in out  # infinite psnr rows are called out


def test_preset_override_beats_config_file(hr_dir, tmp_path):
    lr = tmp_path / "lr"
    assert main(["degrade", hr_dir, str(lr)]) == 0
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("preset: eq3\ntiny: true\nbatch_size: 2\nlr_patch: 16\ntotal_iters: 1\n")
    run = tmp_path / "run"
    rc = main(
        [
            "train",
            "--config", str(cfg),
            "--hr-dir", hr_dir,
            "--lr-dir", str(lr),
            "--out-dir", str(run),
            "--preset", "eq10",
        ]
    )
    assert rc == 0
    with open(run / "loss_log.csv", newline="") as f:
        row = next(csv.DictReader(f))
    # the structural terms only carry weight under the eq10 preset
    assert float(row["l_ssim"]) != 0.0
    assert float(row["l_per"]) == 0.0


def test_ablate_command(hr_dir, tmp_path, capsys):
    lr = tmp_path / "lr"
    assert main(["degrade", hr_dir, str(lr)]) == 0
    out = tmp_path / "ab"
    rc = main(
        [
            "ablate",
            "--hr-dir", hr_dir,
            "--lr-dir", str(lr),
            "--out-dir", str(out),
            "--tiny",
            "--iters", "2",
            "--seed", "1",
            "--batch-size", "2",
            "--lr-patch", "16",
        ]
    )
    assert rc == 0
    text = capsys.readouterr().out
    assert "no_cycle" in text and "cyclic" in text
    assert (out / "ablation.csv").exists()


def test_unknown_flag_exits_with_usage_error(hr_dir):
    with pytest.raises(SystemExit) as exc:
        main(["degrade", hr_dir, "somewhere", "--bogus"])
    assert exc.value.code == 2


def test_missing_command_exits_with_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_errors_surface_as_exit_code_one(tmp_path, capsys):
    assert main(["degrade", str(tmp_path / "nope"), str(tmp_path / "o")]) == 1
    assert "error:" in capsys.readouterr().err

    assert main(["infer", "in.png", "out.png", "--checkpoint", str(tmp_path / "no.ckpt")]) == 1
    capsys.readouterr()

    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    save_image(make_smooth_image(16, 16, seed=0), a / "x.png")
    save_image(make_smooth_image(16, 16, seed=1), b / "y.png")
    assert main(["evaluate", str(a), str(b)]) == 1
    assert "error:" in capsys.readouterr().err


def test_degrade_rejects_bad_jpeg_quality(hr_dir, tmp_path, capsys):
    assert main(["degrade", hr_dir, str(tmp_path / "o"), "--jpeg-q", "500"]) == 1
    assert "error:" in capsys.readouterr().err
