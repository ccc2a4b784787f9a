import numpy as np
import pytest

from cochceps.cli import run
from cochceps.datasets import read_ccgram, read_checkpoint, read_manifest
from cochceps.plot import read_pgm
from cochceps.synthetic import write_synthetic_corpus

FAST = ["--set", "resize_rows=20", "--set", "resize_cols=40", "--set", "encoder_hidden=16",
        "--set", "feature_dim=16", "--set", "projector_hidden=32", "--set", "projector_dim=16", "--set", "ssl_epochs=3",
        "--set", "ssl_batch_size=8", "--set", "probe_epochs=5", "--set", "finetune_epochs=2",
        "--set", "head_hidden=8"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    raw = write_synthetic_corpus(root / "raw", n_speakers=8, files_per_speaker=1, seed=0)
    assert run(["preprocess", "--in", str(raw), "--out", str(root / "seg")]) == 0
    assert run(["extract", "--in", str(root / "seg" / "segments.tsv"), "--out", str(root / "ccg")]) == 0
    assert run(["folds", "--in", str(root / "ccg" / "index.tsv"), "--out", str(root / "folds.tsv")]) == 0
    return root


def test_usage_errors(capsys):
    assert run(["frobnicate"]) == 1
    assert "usage:" in capsys.readouterr().err
    assert run([]) == 1
    assert "usage:" in capsys.readouterr().err
    assert run(["extract", "--in", "x.tsv"]) == 1


def test_unknown_config_key(capsys, pipeline):
    code = run(["folds", "--in", str(pipeline / "ccg" / "index.tsv"), "--out", str(pipeline / "f2.tsv"),
                "--set", "no_such_key=1"])
    assert code == 1 and "no_such_key" in capsys.readouterr().err


def test_missing_input_is_data_error(tmp_path, capsys):
    assert run(["extract", "--in", str(tmp_path / "none.tsv"), "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_corrupt_ccg_is_data_error(tmp_path):
    bad = tmp_path / "bad.ccg"
    bad.write_bytes(b"NOPE" + bytes(40))
    assert run(["plot", "--in", str(bad), "--out", str(tmp_path / "p.pgm")]) == 2


def test_extract_count_matches_manifest(pipeline):
    segs = read_manifest(pipeline / "seg" / "segments.tsv")
    index = read_manifest(pipeline / "ccg" / "index.tsv")
    assert len(segs) == len(index) == len(list((pipeline / "ccg").glob("*.ccg"))) > 0
    assert all(e.duration == 3.0 for e in segs.entries)
    assert read_ccgram(pipeline / "ccg" / index.entries[0].path).values.shape == (20, 239)


def test_augment_preview_deterministic(pipeline, tmp_path):
    ccg = next((pipeline / "ccg").glob("*.ccg"))
    for name in ("a.pgm", "b.pgm"):
        assert run(["augment-preview", "--in", str(ccg), "--out", str(tmp_path / name), "--seed", "3"]) == 0
    a = (tmp_path / "a.pgm").read_bytes()
    assert a == (tmp_path / "b.pgm").read_bytes()
    gray = read_pgm(a)
    assert gray.shape == (20, 2 * 239 + 2)


def test_plot_overlay(pipeline, tmp_path):
    ccg = next((pipeline / "ccg").glob("*.ccg"))
    assert run(["plot", "--in", str(ccg), "--out", str(tmp_path / "p.pgm"), "--overlay", "angle",
                "--set", "mask_phi=4"]) == 0
    gray = read_pgm((tmp_path / "p.pgm").read_bytes())
    assert gray.shape == (20, 239)


def test_train_probe_finetune_eval(pipeline, tmp_path, capsys):
    idx, folds = str(pipeline / "ccg" / "index.tsv"), str(pipeline / "folds.tsv")
    ckp = tmp_path / "enc.ckp"
    assert run(["pretrain", "--in", idx, "--folds", folds, "--out", str(ckp), *FAST]) == 0
    tensors, _ = read_checkpoint(ckp)
    assert tensors["encoder.0.weight"].shape == (800, 16)
    assert (tmp_path / "enc.ckp.loss.tsv").exists()

    assert run(["probe", "--in", idx, "--folds", folds, "--model", str(ckp), "--out", str(tmp_path / "p.txt"),
                "--save-model", str(tmp_path / "probe.ckp"), *FAST]) == 0
    report = dict(line.split("=", 1) for line in (tmp_path / "p.txt").read_text().splitlines())
    assert 0 <= float(report["weighted_accuracy"]) <= 1 and report["mode"] == "encoder"

    assert run(["probe", "--in", idx, "--folds", folds, "--flatten", "--out", str(tmp_path / "f.txt"), *FAST]) == 0
    assert run(["probe", "--in", idx, "--out", str(tmp_path / "x.txt"), *FAST]) == 1

    assert run(["finetune", "--in", idx, "--folds", folds, "--model", str(ckp), "--out", str(tmp_path / "ft.txt"),
                "--save-model", str(tmp_path / "ft.ckp"), *FAST]) == 0
    for model in ("probe.ckp", "ft.ckp"):
        assert run(["eval", "--in", idx, "--folds", folds, "--model", str(tmp_path / model),
                    "--out", str(tmp_path / "e.txt"), *FAST]) == 0
    assert run(["eval", "--in", idx, "--model", str(ckp), "--out", str(tmp_path / "e.txt"), *FAST]) == 2


def test_pretrain_deterministic(pipeline, tmp_path):
    idx = str(pipeline / "ccg" / "index.tsv")
    for name in ("a.ckp", "b.ckp"):
        assert run(["pretrain", "--in", idx, "--out", str(tmp_path / name), "--seed", "9", *FAST]) == 0
    assert (tmp_path / "a.ckp").read_bytes() == (tmp_path / "b.ckp").read_bytes()
    c, _ = read_checkpoint(tmp_path / "a.ckp")
    assert np.all(np.isfinite(c["meta.history"]))
