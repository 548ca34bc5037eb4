"""Command-line surface.  Golden help files live in tests/golden; regenerate
with HINOTE_UPDATE_GOLDEN=1 after an intentional flag change."""
import json
import os
from pathlib import Path

import numpy as np
import pytest

from hinote.cli import COMMANDS, main
from hinote.sfb import read_sfb, write_sfb
from hinote.spectral import spectral_resize
from hinote.fields import GridField

GOLDEN = Path(__file__).parent / "golden"

TINY_TOML = """
[grf]
n = 32
k_max = 6.0

[splits]
train = 4
valid = 1
test = 2

[encoder]
channels = 4
blocks = 1

[hierarchy]
levels = 2
width = 8
blocks = 1
heads = 2

[decoder]
lift_hidden = 8
proj_hidden = 8

[train]
steps = 4
batch = 2
crop = 8
queries = 32
val_every = 2
seed = 5
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_TOML)
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    cfg = root / "tiny.toml"
    cfg.write_text(TINY_TOML)
    assert main(["gen-data", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root


class TestHelp:
    @pytest.mark.parametrize("command", [None, *COMMANDS])
    def test_golden(self, command, capsys, monkeypatch):
        monkeypatch.setenv("COLUMNS", "80")
        argv = ([command] if command else []) + ["--help"]
        assert main(argv) == 0
        text = capsys.readouterr().out
        golden = GOLDEN / f"help_{command or 'hinote'}.txt"
        if os.environ.get("HINOTE_UPDATE_GOLDEN"):
            golden.write_text(text)
        assert text == golden.read_text()

    def test_every_command_takes_seed(self):
        for name in COMMANDS:
            assert "--seed" in (GOLDEN / f"help_{name}.txt").read_text()


class TestUsageErrors:
    def test_eval_without_checkpoint(self, capsys):
        assert main(["eval", "--data", "x"]) == 2
        assert "--ckpt" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert main(["spectra", "--in", "a.sfb", "--colour", "red"]) == 2
        assert "--colour" in capsys.readouterr().err

    def test_bad_extents(self, capsys):
        assert main(["infer", "--ckpt", "c", "--in", "a", "--out", "b", "--out-extents", "10by10"]) == 2
        assert "HxW" in capsys.readouterr().err

    def test_unknown_check(self, capsys):
        assert main(["grad-check", "--op", "nonsense"]) == 2
        assert "unknown check 'nonsense'" in capsys.readouterr().err

    def test_missing_file_is_runtime_failure(self, tmp_path, capsys):
        assert main(["spectra", "--in", str(tmp_path / "none.sfb")]) == 1
        err = capsys.readouterr().err
        assert err.startswith("hinote spectra: error: dataset not found") and err.count("\n") == 1


class TestGradCheck:
    def test_single_op_passes(self, capsys):
        assert main(["grad-check", "--op", "matmul", "--op", "gelu"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "check,params,max_rel_error,status"
        assert [ln.split(",")[-1] for ln in lines[1:]] == ["pass", "pass"]

    def test_impossible_tolerance_fails(self, capsys):
        assert main(["grad-check", "--op", "matmul", "--tol", "0"]) == 1
        assert capsys.readouterr().out.splitlines()[1].endswith("FAIL")


class TestPipeline:
    def test_outputs(self, trained):
        run = trained / "run"
        for name in ("final.ckpt", "final.ckpt.json", "best.ckpt", "train_log.csv"):
            assert (run / name).exists(), name
        assert (run / "train_log.csv").read_text().splitlines()[0] == "step,loss,lr"

    def test_eval_writes_every_csv(self, trained, tmp_path, capsys):
        code = main(["eval", "--ckpt", str(trained / "run" / "final.ckpt"), "--data", str(trained / "data"),
                     "--scales", "2,3", "--out", str(tmp_path)])
        assert code == 0
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["metrics_bicubic.csv", "metrics_bilinear.csv", "metrics_hinote.csv",
                         "metrics_nearest.csv", "summary.csv"]
        rows = (tmp_path / "metrics_hinote.csv").read_text().splitlines()
        assert rows[0] == "record,scale,mse,psnr,ssim" and len(rows) == 1 + 2 * 2
        assert "psnr=" in capsys.readouterr().out

    def test_eval_default_scales_too_coarse_for_small_grid(self, trained, tmp_path, capsys):
        # 32-point records leave fewer than eight LR cells at every default scale
        code = main(["eval", "--ckpt", str(trained / "run" / "final.ckpt"), "--data", str(trained / "data"),
                     "--out", str(tmp_path)])
        assert code == 1
        assert "fewer than 8 LR cells" in capsys.readouterr().err
        assert not (tmp_path / "summary.csv").exists()

    def test_infer_unit_scale_is_spectral_identity(self, trained, tmp_path, capsys):
        src = trained / "data" / "test.sfb"
        out = tmp_path / "same.sfb"
        assert main(["infer", "--ckpt", str(trained / "run" / "final.ckpt"), "--in", str(src),
                     "--scale", "1", "--out", str(out)]) == 0
        meta = json.loads(capsys.readouterr().out)
        assert meta["mode"] == "spectral-identity" and meta["out_extents"] == [32, 32]
        ref = tmp_path / "ref.sfb"
        write_sfb(ref, [GridField(spectral_resize(f.values, f.extents), f.box) for f in read_sfb(src)])
        assert out.read_bytes() == ref.read_bytes()

    @pytest.mark.parametrize("flag, value, extents", [("--scale", "1.5", [48, 48]), ("--scale", "6.3", [202, 202]),
                                                      ("--out-extents", "37x41", [37, 41])])
    def test_infer_extents(self, trained, tmp_path, capsys, flag, value, extents):
        out = tmp_path / "sr.sfb"
        assert main(["infer", "--ckpt", str(trained / "run" / "final.ckpt"), "--in",
                     str(trained / "data" / "test.sfb"), flag, value, "--out", str(out)]) == 0
        assert json.loads(capsys.readouterr().out)["out_extents"] == extents
        fields = read_sfb(out)
        assert fields[0].extents == tuple(extents) and all(np.isfinite(f.values).all() for f in fields)

    def test_prior_corr(self, trained, tmp_path):
        out = tmp_path / "corr.csv"
        assert main(["prior-corr", "--ckpt", str(trained / "run" / "final.ckpt"), "--data",
                     str(trained / "data"), "--scale", "2", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "record,alpha,beta,pearson_r" and len(lines) == 3

    def test_spectra(self, trained, tmp_path, capsys):
        assert main(["spectra", "--in", str(trained / "data" / "test.sfb"), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "spectrum_test.csv").exists()

    def test_resume_flag(self, trained, tiny_config, tmp_path):
        code = main(["train", "--config", str(tiny_config), "--data", str(trained / "data"), "--out",
                     str(tmp_path), "--resume", str(trained / "run" / "final.ckpt"), "--steps", "6"])
        assert code == 0
        assert len((tmp_path / "train_log.csv").read_text().splitlines()) == 2


class TestBench:
    def test_csv_and_seed(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        assert main(["bench-attn", "--sizes", "16,32", "--d", "8", "--heads", "2", "--reps", "2",
                     "--seed", "4", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 5 and lines[0].startswith("variant")

    def test_bad_sizes(self, capsys):
        assert main(["bench-attn", "--sizes", "0,4"]) == 2


class TestGenData:
    def test_reproducible(self, tiny_config, tmp_path, capsys):
        for name in ("a", "b"):
            assert main(["gen-data", "--config", str(tiny_config), "--out", str(tmp_path / name), "--seed", "9"]) == 0
        for split in ("train", "valid", "test"):
            assert (tmp_path / "a" / f"{split}.sfb").read_bytes() == (tmp_path / "b" / f"{split}.sfb").read_bytes()

    def test_seed_changes_data(self, tiny_config, tmp_path):
        main(["gen-data", "--config", str(tiny_config), "--out", str(tmp_path / "a"), "--seed", "1"])
        main(["gen-data", "--config", str(tiny_config), "--out", str(tmp_path / "b"), "--seed", "2"])
        assert (tmp_path / "a" / "test.sfb").read_bytes() != (tmp_path / "b" / "test.sfb").read_bytes()
