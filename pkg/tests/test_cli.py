import os

import numpy as np
import pytest

from embedlab import cli
from embedlab import denoiser as dn


@pytest.fixture()
def ckpt(tmp_path, untrained_bundle):
    b = untrained_bundle
    tensors = dn.checkpoint_tensors(b.enc_params, b.den_params, b.enc_cfg,
                                    b.den_cfg, (100, 1e-3, 0.2))
    path = tmp_path / "model.ckpt"
    dn.save_checkpoint(path, tensors)
    return str(path)


def _read_all(d):
    out = {}
    for name in sorted(os.listdir(d)):
        with open(os.path.join(d, name), "rb") as f:
            out[name] = f.read()
    return out


def test_gen_data_deterministic_and_parsable(tmp_path):
    d1 = str(tmp_path / "a")
    d2 = str(tmp_path / "b")
    assert cli.main(["gen-data", "--out", d1, "--n", "8"]) == 0
    assert cli.main(["gen-data", "--out", d2, "--n", "8"]) == 0
    f1, f2 = _read_all(d1), _read_all(d2)
    assert set(f1) == set(f2)
    for name in f1:
        assert f1[name] == f2[name], name
    data = np.loadtxt(os.path.join(d1, "dataset.csv"),
                      delimiter=",", skiprows=1)
    assert data.shape == (8, 66)
    manifest = open(os.path.join(d1, "manifest.txt")).read()
    assert "command=gen-data" in manifest
    assert "config_hash=" in manifest
    assert "n=8" in manifest


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n=4  # comment\nseed=3\n")
    d = str(tmp_path / "out")
    assert cli.main(["gen-data", "--config", str(cfg), "--out", d,
                     "--n", "6"]) == 0
    manifest = open(os.path.join(d, "manifest.txt")).read()
    assert "n=6" in manifest      # flag beats config file
    assert "seed=3" in manifest   # config file beats default


def test_env_var_overrides_out(tmp_path, monkeypatch):
    target = str(tmp_path / "envout")
    monkeypatch.setenv("EMBEDLAB_OUT", target)
    assert cli.main(["gen-data", "--out", str(tmp_path / "ignored"),
                     "--n", "2"]) == 0
    assert os.path.exists(os.path.join(target, "dataset.csv"))
    assert not os.path.exists(os.path.join(tmp_path / "ignored", "dataset.csv"))


def test_exit_codes(tmp_path):
    assert cli.main(["no-such-command"]) == 1
    assert cli.main(["gen-data", "--n", "x"]) == 1
    assert cli.main(["sample", "--ckpt", "/does/not/exist",
                     "--out", str(tmp_path / "s")]) == 2
    assert cli.main(["edit", "--config", "/does/not/exist.cfg"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("unknown_key=1\n")
    assert cli.main(["verify", "--config", str(bad),
                     "--out", str(tmp_path / "v")]) == 2
    noeq = tmp_path / "noeq.cfg"
    noeq.write_text("just a line\n")
    assert cli.main(["verify", "--config", str(noeq),
                     "--out", str(tmp_path / "v")]) == 2


def test_sample_outputs(tmp_path, ckpt):
    d = str(tmp_path / "s")
    assert cli.main(["sample", "--ckpt", ckpt, "--out", d, "--n", "2",
                     "--prompt", "a photo of vbar dim"]) == 0
    assert os.path.exists(os.path.join(d, "gen_0.pgm"))
    rows = open(os.path.join(d, "metrics.csv")).read().splitlines()
    assert rows[0] == "seed,class,score,style"
    assert len(rows) == 3


def test_sample_rejects_unknown_word(tmp_path, ckpt):
    assert cli.main(["sample", "--ckpt", ckpt, "--out", str(tmp_path / "s"),
                     "--prompt", "a photo of cat"]) == 2


def test_edit_deterministic_outputs(tmp_path, ckpt):
    d1 = str(tmp_path / "e1")
    d2 = str(tmp_path / "e2")
    args = ["edit", "--ckpt", ckpt, "--recipe", "swap",
            "--from", "a photo of hbar bright",
            "--to", "a photo of vbar bright", "--seeds", "3"]
    assert cli.main(args + ["--out", d1]) == 0
    assert cli.main(args + ["--out", d2]) == 0
    f1, f2 = _read_all(d1), _read_all(d2)
    assert set(f1) == set(f2)
    for name in f1:
        assert f1[name] == f2[name], name
    assert "edits.csv" in f1 and "src_0.pgm" in f1 and "edit_0.pgm" in f1


def test_edit_positions_one_based(tmp_path, ckpt):
    assert cli.main(["edit", "--ckpt", ckpt, "--out", str(tmp_path / "e"),
                     "--positions", "0"]) == 2
    assert cli.main(["edit", "--ckpt", ckpt, "--out", str(tmp_path / "e"),
                     "--recipe", "scale", "--scale-pos", "0"]) == 2
    assert cli.main(["edit", "--ckpt", ckpt, "--out", str(tmp_path / "e"),
                     "--recipe", "mask", "--mask-from", "0",
                     "--mask-to", "2"]) == 2


def test_mask_sweep_families(tmp_path, ckpt):
    d = str(tmp_path / "m")
    assert cli.main(["mask-sweep", "--ckpt", ckpt, "--out", d,
                     "--seeds", "4"]) == 0
    rows = open(os.path.join(d, "mask_sweep.csv")).read().splitlines()
    labels = [r.split(",")[0] for r in rows[1:]]
    assert "none" in labels
    assert "single_M1" in labels and "single_M16" in labels
    assert "prefix_M1-1" in labels and "prefix_M1-15" in labels
    assert "suffix_M2-16" in labels and "suffix_M16-16" in labels
    assert len(labels) == 1 + 16 + 15 + 15
    for r in rows[1:]:
        _, keep, lo, hi = r.split(",")
        assert 0.0 <= float(lo) <= float(keep) <= float(hi) <= 1.0


def test_svd_dirs_outputs(tmp_path, ckpt):
    d = str(tmp_path / "sv")
    assert cli.main(["svd-dirs", "--ckpt", ckpt, "--out", d, "--k", "1"]) == 0
    rows = open(os.path.join(d, "sweep.csv")).read().splitlines()
    assert len(rows) == 8  # header + 7 default strengths
    assert cli.main(["svd-dirs", "--ckpt", ckpt, "--out", d,
                     "--side", "diagonal"]) == 2


def test_opt_lambda_runs(tmp_path, ckpt):
    d = str(tmp_path / "o")
    assert cli.main(["opt-lambda", "--ckpt", ckpt, "--out", d,
                     "--steps", "2"]) == 0
    rows = open(os.path.join(d, "trajectory.csv")).read().splitlines()
    assert len(rows) == 4
    losses = [float(r.split(",")[1]) for r in rows[1:]]
    assert losses[2] <= losses[0]


def test_invert_runs(tmp_path, ckpt):
    d = str(tmp_path / "i")
    assert cli.main(["invert", "--ckpt", ckpt, "--out", d]) == 0
    row = open(os.path.join(d, "invert.csv")).read().splitlines()[1]
    err = float(row.split(",")[0])
    assert np.isfinite(err)
    for name in ("real.pgm", "recon.pgm", "edited.pgm"):
        assert os.path.exists(os.path.join(d, name))


def test_verify_command(tmp_path):
    d = str(tmp_path / "v")
    assert cli.main(["verify", "--out", d]) == 0
    report = open(os.path.join(d, "verify.txt")).read()
    assert "checks passed" in report
    assert "FAIL" not in report


def test_train_command_small(tmp_path):
    d = str(tmp_path / "t")
    assert cli.main(["train", "--out", d, "--steps", "30", "--T", "10",
                     "--batch-size", "8"]) == 0
    assert os.path.exists(os.path.join(d, "model.ckpt"))
    rows = open(os.path.join(d, "loss.csv")).read().splitlines()
    assert rows[0] == "step,loss"
    # the produced checkpoint loads back into a usable bundle
    d2 = str(tmp_path / "s")
    assert cli.main(["sample", "--ckpt", os.path.join(d, "model.ckpt"),
                     "--out", d2, "--n", "1"]) == 0
