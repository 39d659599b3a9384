import os

import numpy as np
import pytest

from panodepth import autodiff as ad
from panodepth import gradsuite
from panodepth.cli import main
from panodepth.panorama_io import Panorama, load_checkpoint, read_pfm, write_pfm, write_ppm


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def files(path):
    return {name: open(os.path.join(path, name), "rb").read() for name in sorted(os.listdir(path))}


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--seed", "7", "--count", "4", "--width", "32", "--height", "16",
                 "--out", str(root / "train")]) == 0
    assert main(["gen-data", "--seed", "8", "--count", "2", "--width", "32", "--height", "16",
                 "--out", str(root / "val")]) == 0
    (root / "fast.cfg").write_text("epochs = 1\nlearning_rate = 0.001\nplateau_patience = 1\n")
    return root


def test_gen_data(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-data", "--seed", 7, "--count", 4, "--width", 32, "--height", 16,
                       "--out", tmp_path / "a")
    assert code == 0 and out.strip().endswith("manifest.txt")
    assert len(os.listdir(tmp_path / "a")) == 4 * 4 + 1
    run(capsys, "gen-data", "--seed", 7, "--count", 4, "--width", 32, "--height", 16, "--out", tmp_path / "b")
    assert files(tmp_path / "a") == files(tmp_path / "b")
    assert run(capsys, "gen-data", "--count", 0, "--out", tmp_path / "c")[0] == 1


def test_usage_errors(capsys):
    assert run(capsys, "nonsense")[0] == 1
    assert run(capsys, "eval", "--pred", "x.pfm")[0] == 1


def test_train_fused_tags_and_determinism(tiny_data, tmp_path, capsys):
    args = ["train", "--regimen", "fused", "--data", tiny_data / "train", "--val", tiny_data / "val",
            "--config", tiny_data / "fast.cfg"]
    code, out, _ = run(capsys, *args, "--out", tmp_path / "a")
    assert code == 0
    phases = [line.split()[1] for line in out.splitlines() if not line.startswith("best")]
    assert phases == ["unsupervised", "supervised"]
    ckpts = sorted(f for f in os.listdir(tmp_path / "a") if f.endswith(".ckpt"))
    tags = {f: load_checkpoint(tmp_path / "a" / f)[1]["phase"] for f in ckpts}
    assert tags["best.ckpt"] == "fused"
    assert tags["fused_supervised_epoch01.ckpt"] == "fused"
    assert tags["fused_unsupervised_epoch01.ckpt"] == "unsupervised"
    run(capsys, *args, "--out", tmp_path / "b")
    assert files(tmp_path / "a").keys() == files(tmp_path / "b").keys()
    for name, blob in files(tmp_path / "a").items():
        if name != "train.log":
            assert blob == files(tmp_path / "b")[name], name
    assert (tmp_path / "a" / "train.log").read_text().replace(str(tmp_path / "a"), "") == \
        (tmp_path / "b" / "train.log").read_text().replace(str(tmp_path / "b"), "")


def test_train_supervised_without_gt_fails(tiny_data, tmp_path, capsys):
    bare = tmp_path / "bare"
    bare.mkdir()
    for name in os.listdir(tiny_data / "train"):
        if not name.endswith(".pfm"):
            (bare / name).write_bytes((tiny_data / "train" / name).read_bytes())
    code, _, err = run(capsys, "train", "--regimen", "supervised", "--data", bare,
                       "--config", tiny_data / "fast.cfg", "--out", tmp_path / "o")
    assert code == 2 and "missing" in err


@pytest.fixture(scope="module")
def trained(tiny_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--regimen", "supervised", "--data", str(tiny_data / "train"),
                 "--config", str(tiny_data / "fast.cfg"), "--out", str(out)]) == 0
    return out / "best.ckpt"


def test_infer(trained, tiny_data, tmp_path, capsys):
    rgb = tiny_data / "train" / "0000_top.ppm"
    code, _, _ = run(capsys, "infer", "--checkpoint", trained, "--rgb", rgb, "--out", tmp_path / "a", "--vis")
    assert code == 0
    disp = read_pfm(tmp_path / "a" / "disparity.pfm", "disparity").data
    assert np.all(disp > 0) and np.all(disp < 0.5)
    assert (tmp_path / "a" / "depth.pgm").exists()
    run(capsys, "infer", "--checkpoint", trained, "--rgb", rgb, "--out", tmp_path / "b", "--vis")
    assert files(tmp_path / "a") == files(tmp_path / "b")
    big = tmp_path / "big.ppm"
    write_ppm(Panorama(np.zeros((32, 64, 3)), "rgb"), big)
    assert run(capsys, "infer", "--checkpoint", trained, "--rgb", big, "--out", tmp_path / "c")[0] == 2


def test_sgm(tmp_path, capsys):
    img = Panorama(np.random.default_rng(0).uniform(0, 1, (32, 64, 3)), "rgb")
    write_ppm(img, tmp_path / "t.ppm")
    code, out, _ = run(capsys, "sgm", "--top", tmp_path / "t.ppm", "--bottom", tmp_path / "t.ppm",
                       "--baseline", 0.26, "--out", tmp_path / "a")
    assert code == 0
    assert np.all(read_pfm(tmp_path / "a" / "disparity.pfm", "disparity").data == 0)
    run(capsys, "sgm", "--top", tmp_path / "t.ppm", "--bottom", tmp_path / "t.ppm",
        "--baseline", 0.26, "--out", tmp_path / "b")
    assert files(tmp_path / "a") == files(tmp_path / "b")
    write_ppm(Panorama(np.zeros((16, 64, 3)), "rgb"), tmp_path / "s.ppm")
    assert run(capsys, "sgm", "--top", tmp_path / "t.ppm", "--bottom", tmp_path / "s.ppm",
               "--baseline", 0.26, "--out", tmp_path / "c")[0] == 2
    assert run(capsys, "sgm", "--top", tmp_path / "t.ppm", "--bottom", tmp_path / "t.ppm",
               "--baseline", 0.26, "--p1", 200, "--out", tmp_path / "d")[0] == 1


def test_fuse(tmp_path, capsys):
    write_pfm(Panorama(np.array([[1.0, 2.0, 3.0]]), "depth"), tmp_path / "n.pfm")
    write_pfm(Panorama(np.array([[3.0, 4.0, 5.0]]), "depth"), tmp_path / "s.pfm")
    code, out, _ = run(capsys, "fuse", "--network", tmp_path / "n.pfm", "--sgm", tmp_path / "s.pfm",
                       "--out", tmp_path / "f.pfm")
    assert code == 0 and "scale=2.0" in out
    assert read_pfm(tmp_path / "f.pfm").data.tolist() == [[2.0, 4.0, 6.0]]
    assert (tmp_path / "f.pfm.report.txt").read_text() == out
    _, out, _ = run(capsys, "fuse", "--network", tmp_path / "n.pfm", "--sgm", tmp_path / "s.pfm",
                    "--mode", "literal", "--out", tmp_path / "g.pfm")
    assert "scale=0.5" in out


def test_eval(tmp_path, capsys):
    gt = np.random.default_rng(1).uniform(1, 10, (8, 16))
    write_pfm(Panorama(gt, "depth"), tmp_path / "g.pfm")
    code, out, _ = run(capsys, "eval", "--pred", tmp_path / "g.pfm", "--gt", tmp_path / "g.pfm")
    assert code == 0
    assert out.splitlines()[1].split()[1:] == ["0.0000"] * 4 + ["1.0000"] * 3
    _, kv, _ = run(capsys, "eval", "--pred", tmp_path / "g.pfm", "--gt", tmp_path / "g.pfm", "--format", "kv")
    assert "abs_rel=0.0\n" in kv
    write_pfm(Panorama(np.zeros((8, 16)), "depth"), tmp_path / "z.pfm")
    assert run(capsys, "eval", "--pred", tmp_path / "z.pfm", "--gt", tmp_path / "g.pfm")[0] == 2
    assert run(capsys, "eval", "--pred", tmp_path / "missing.pfm", "--gt", tmp_path / "g.pfm")[0] == 2


def test_gradcheck(capsys, monkeypatch):
    code, out, _ = run(capsys, "gradcheck", "--op", "relu", "--op", "conv2d")
    assert code == 0 and out.splitlines()[0].startswith("relu ") and out.count(" ok") == 2

    def broken_sigmoid(x):
        y = 1 / (1 + np.exp(-x.data))
        return ad.make_op(y, (x,), lambda g: (-g * y * (1 - y),))

    monkeypatch.setitem(gradsuite.CHECKS, "sigmoid", gradsuite._simple(broken_sigmoid, (2, 3, 4, 4)))
    code, out, err = run(capsys, "gradcheck", "--op", "sigmoid")
    assert code == 3 and "FAIL" in out and "sigmoid" in err
    assert run(capsys, "gradcheck", "--op", "bogus")[0] == 1
