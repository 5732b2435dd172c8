import json

import numpy as np
import pytest

from lfmdt.cli import main
from lfmdt.lightfield import LightField, read_lfb, write_lfb


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "scene.json").write_text(json.dumps({"two_layer": {"size": 64, "seed": 1}}))
    return tmp_path


def run(capsys, *argv):
    capsys.readouterr()
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_eval_identical(workdir, capsys):
    assert main(["synth", "scene.json", "hr.lfb"]) == 0
    code, out, _ = run(capsys, "eval", "hr.lfb", "hr.lfb")
    assert code == 0 and out.strip() == "PSNR: 100.00 dB, SSIM: 1.0000"


def test_pipeline_zero_weights_equal_bicubic(workdir, capsys):
    assert main(["synth", "scene.json", "hr.lfb"]) == 0
    assert main(["degrade", "hr.lfb", "2", "lr.lfb"]) == 0
    assert main(["init", "--preset", "demo", "--zero", "zero.lfmw"]) == 0
    assert main(["infer", "--preset", "demo", "--weights", "zero.lfmw", "lr.lfb", "sr.lfb"]) == 0
    assert main(["upsample", "lr.lfb", "2", "bic.lfb"]) == 0
    assert (workdir / "sr.lfb").read_bytes() == (workdir / "bic.lfb").read_bytes()
    code, out, _ = run(capsys, "eval", "sr.lfb", "hr.lfb")
    assert code == 0 and out.startswith("PSNR: ") and ", SSIM: " in out
    for name in ("hr.lfb", "lr.lfb", "sr.lfb", "zero.lfmw"):
        assert (workdir / f"{name}.manifest.json").exists()


def test_outputs_reproducible(workdir):
    main(["synth", "scene.json", "a.lfb"])
    main(["synth", "scene.json", "b.lfb"])
    assert (workdir / "a.lfb").read_bytes() == (workdir / "b.lfb").read_bytes()
    main(["init", "--preset", "toy", "--seed", "3", "w1.lfmw"])
    main(["init", "--preset", "toy", "--seed", "3", "w2.lfmw"])
    assert (workdir / "w1.lfmw").read_bytes() == (workdir / "w2.lfmw").read_bytes()


def test_infer_rgb(workdir):
    rng = np.random.default_rng(0)
    write_lfb(LightField(rng.uniform(size=(3, 3, 8, 8, 3)).astype(np.float32)), workdir / "rgb.lfb")
    assert main(["init", "--preset", "toy", "--zero", "z.lfmw"]) == 0
    assert main(["infer", "--preset", "toy", "--weights", "z.lfmw", "rgb.lfb", "out.lfb"]) == 0
    assert read_lfb(workdir / "out.lfb").shape == (3, 3, 16, 16, 3)


def test_train_writes_artifacts(workdir, capsys):
    scene = {"layers": [{"disparity": 0.5, "texture": [[0.05, 0.02, 0.0, 0.3]]}], "H": 16, "W": 16, "U": 3, "V": 3}
    (workdir / "small.json").write_text(json.dumps(scene))
    code, out, _ = run(
        capsys, "train", "--preset", "toy", "--scene", "small.json", "--steps", "3",
        "--set", "train.patch=8", "--set", "train.log_every=1", "--out", "run",
    )
    assert code == 0 and "PSNR SR:" in out
    for name in ("weights.lfmw", "curve.csv", "summary.txt", "loss.png", "manifest.json"):
        assert (workdir / "run" / name).exists()
    rows = (workdir / "run" / "curve.csv").read_text().splitlines()
    assert rows[0] == "step,loss,psnr,lr" and len(rows) == 4


def test_profile(workdir, capsys):
    code, out, _ = run(capsys, "profile", "--preset", "toy", "--H", "8", "--W", "8", "--verify", "--out", "prof")
    assert code == 0
    assert "parameter store count: 5492" in out and "instrumented MACs: match" in out
    assert (workdir / "prof" / "report.csv").read_text().startswith("component,params,macs,formula")
    assert (workdir / "prof" / "complexity.png").exists()


def test_profile_paper_totals(capsys):
    code, out, _ = run(capsys, "profile")
    total = [l for l in out.splitlines() if l.startswith("TOTAL")][0].split()
    assert code == 0 and f"parameter store count: {total[1]}" in out


def test_gradcheck_small_step(capsys):
    code, out, _ = run(capsys, "gradcheck", "--h", "1e-5", "--tol", "1e-3", "--set", "gradcheck.samples=40")
    assert code == 0 and out.startswith("gradcheck: max_rel_err=") and out.strip().endswith("PASS")


def test_dump_features(workdir):
    main(["synth", "scene.json", "hr.lfb"])
    main(["degrade", "hr.lfb", "4", "lr.lfb"])
    main(["init", "--preset", "demo", "w.lfmw"])
    assert main(["dump-features", "--preset", "demo", "--weights", "w.lfmw", "lr.lfb", "feats"]) == 0
    b0 = read_lfb(workdir / "feats" / "branch0.lfb", clamp=False)
    assert b0.shape == (5, 5, 16, 16, 8)
    assert (workdir / "feats" / "features.png").exists()


@pytest.mark.parametrize(
    "argv, code, kind",
    [
        (["eval", "missing.lfb", "missing.lfb"], 4, "FileNotFoundError"),
        (["profile", "--set", "network.Q=1"], 3, "ConfigError"),
        (["synth", "bad.json", "x.lfb"], 3, "ConfigError"),
    ],
)
def test_errors_are_one_line(workdir, capsys, argv, code, kind):
    (workdir / "bad.json").write_text("{")
    got, out, err = run(capsys, *argv)
    assert got == code
    assert err.count("\n") == 1 and err.startswith(f"error: {kind}: ")


def test_checkpoint_mismatch(workdir, capsys):
    main(["synth", "scene.json", "hr.lfb"])
    main(["degrade", "hr.lfb", "2", "lr.lfb"])
    main(["init", "--preset", "toy", "w.lfmw"])
    got, _, err = run(capsys, "infer", "--preset", "demo", "--weights", "w.lfmw", "lr.lfb", "x.lfb")
    assert got == 5 and err.startswith("error: CheckpointError: ")


def test_corrupt_lfb(workdir, capsys):
    (workdir / "junk.lfb").write_bytes(b"LFB1\x01\x00")
    got, _, err = run(capsys, "eval", "junk.lfb", "junk.lfb")
    assert got == 5 and err.startswith("error: FormatError: ")
