import json
import math

import numpy as np
import pytest

from latent_invert.cli import COMMANDS, run_command
from latent_invert.fileio import load_checkpoint, read_pgm


def run(*argv):
    return run_command([str(a) for a in argv])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert run("train", "--out", out, "--steps", 30, "--eval-every", 10, "--batch-size", 8) == 0
    return out


@pytest.fixture(scope="module")
def neural(tmp_path_factory):
    out = tmp_path_factory.mktemp("neural")
    assert run("train", "--out", out, "--steps", 5, "--backend", "neural", "--batch-size", 4) == 0
    return out


def drop_wallclock(text):
    return [line.rsplit(",", 1)[0] for line in text.splitlines()]


def test_train_layout(trained):
    assert {p.name for p in trained.iterdir()} == {"config.resolved", "metrics.csv", "ckpt.bin", "img"}
    assert len((trained / "metrics.csv").read_text().splitlines()) == 1 + 3
    assert "steps=30" in (trained / "config.resolved").read_text()
    grid = read_pgm(trained / "img" / "000_reconstruction.pgm")
    assert grid.shape == (2 * 32 + 1, 8 * 33 - 1)


def test_train_ten_steps_one_row(tmp_path):
    assert run("train", "--out", tmp_path, "--steps", 10, "--batch-size", 2) == 0
    rows = (tmp_path / "metrics.csv").read_text().splitlines()[1:]
    assert len(rows) == math.ceil(10 / 100)


def test_train_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run("train", "--out", tmp_path / d, "--steps", 8, "--eval-every", 3, "--batch-size", 4) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "ckpt.bin").read_bytes() == (b / "ckpt.bin").read_bytes()
    assert drop_wallclock((a / "metrics.csv").read_text()) == drop_wallclock((b / "metrics.csv").read_text())
    assert (a / "img/000_reconstruction.pgm").read_bytes() == (b / "img/000_reconstruction.pgm").read_bytes()


def test_config_file_and_set(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("steps=3\nseed=5\nbatch_size=2\n")
    assert run("train", "--config", cfg, "--set", "seed=6", "--out", tmp_path / "r") == 0
    text = (tmp_path / "r/config.resolved").read_text()
    assert "seed=6" in text and "steps=3" in text


def test_checkpoint_carries_f(trained):
    stores, echo = load_checkpoint(trained / "ckpt.bin")
    assert set(stores) == {"P", "F"}
    assert "out_dir" not in echo


def test_baseline(tmp_path):
    assert run("baseline", "--out", tmp_path, "--steps", 2, "--batch-size", 2) == 0
    assert (tmp_path / "ckpt.bin").is_file()


def test_finetune(trained, tmp_path):
    assert run("finetune", "--ckpt", trained / "ckpt.bin", "--out", tmp_path, "--steps", 2, "--batch-size", 2) == 0
    rep = json.loads((tmp_path / "report/smoothing.json").read_text())
    assert rep["n_images"] == 64 and "laplacian_ratio" in rep


def test_joint_needs_neural(trained, tmp_path):
    assert run("joint", "--ckpt", trained / "ckpt.bin", "--out", tmp_path, "--steps", 1) == 2


def test_joint(neural, tmp_path):
    assert run("joint", "--ckpt", neural / "ckpt.bin", "--out", tmp_path, "--steps", 3, "--eval-every", 1,
               "--batch-size", 4) == 0
    rep = json.loads((tmp_path / "report/collapse.json").read_text())
    assert len(rep["collapse"]) == 3
    stores, _ = load_checkpoint(tmp_path / "ckpt.bin")
    assert set(stores) == {"P", "F", "G", "D"}


def test_superres(trained, tmp_path):
    assert run("superres", "--ckpt", trained / "ckpt.bin", "--out", tmp_path, "--factor", 4) == 0
    lines = (tmp_path / "report/superres.csv").read_text().splitlines()
    assert lines[0] == "image_idx,psnr_reconstruction,psnr_bilinear" and len(lines) == 9


def test_sweep(trained, tmp_path):
    assert run("sweep", "--ckpt", trained / "ckpt.bin", "--out", tmp_path, "--n", 4) == 0
    assert len((tmp_path / "report/sweep.csv").read_text().splitlines()) == 1 + 16
    assert set(json.loads((tmp_path / "report/sweep_summary.json").read_text())) == {"1", "2", "4", "8"}


def test_ood_eval(trained, tmp_path):
    assert run("ood-eval", "--ckpt", trained / "ckpt.bin", "--out", tmp_path, "--n", 8) == 0
    rep = json.loads((tmp_path / "report/ood.json").read_text())
    assert rep["ratio"] == pytest.approx(rep["mse_ood"] / rep["mse_in_distribution"])


def test_cluster_and_pairs(trained, tmp_path):
    assert run("cluster", "--ckpt", trained / "ckpt.bin", "--out", tmp_path, "--n", 20, "--k", 3) == 0
    tree = json.loads((tmp_path / "report/dendrogram.json").read_text())
    assert tree["n"] == 20 and len(tree["merges"]) == 19
    assert json.loads((tmp_path / "report/cluster.json").read_text())["k"] == 3
    assert run("pairs", "--ckpt", trained / "ckpt.bin", "--out", tmp_path, "--n", 20, "--m", 5) == 0
    lines = (tmp_path / "report/pairs.csv").read_text().splitlines()
    assert lines[0] == "rank,i,j,sq_dist" and len(lines) == 6


def test_gradcheck(tmp_path):
    assert run("gradcheck", "--out", tmp_path, "--seeds", 1) == 0
    rep = json.loads((tmp_path / "report/gradcheck.json").read_text())
    assert rep["max_error"] < 1e-4


def test_render(tmp_path):
    assert run("render", "--out", tmp_path, "--latent", "0,0,0,0,0,0,0,0") == 0
    assert read_pgm(tmp_path / "img/000_render.pgm").shape == (65, 32)


def test_cluster_without_checkpoint(tmp_path, capsys):
    assert run("cluster", "--k", 4, "--out", tmp_path) != 0
    assert "--ckpt" in capsys.readouterr().err


def test_missing_checkpoint_file(tmp_path, capsys):
    assert run("sweep", "--ckpt", tmp_path / "nope.bin", "--out", tmp_path) != 0
    assert "not found" in capsys.readouterr().err


def test_unknown_command(capsys):
    assert run("dance") != 0


def test_bad_flag(tmp_path):
    assert run("train", "--steps", "many", "--out", tmp_path) != 0
    assert run("train", "--set", "steps", "--out", tmp_path) != 0
    assert run("train", "--set", "gamma=1", "--out", tmp_path) != 0


def test_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("LATENT_INVERT_THREADS", "zero")
    assert run("render", "--out", tmp_path) != 0


def test_command_list():
    assert set(COMMANDS) == {"train", "baseline", "finetune", "joint", "superres", "sweep", "ood-eval",
                             "cluster", "pairs", "gradcheck", "render"}
