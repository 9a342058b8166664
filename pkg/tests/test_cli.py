import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from fasthdr import checkpoint as ckpt_io
from fasthdr.cli import main
from fasthdr.imageio import read_png, write_png

SMALL_CFG = """\
total_iters = 3
decay_iter = 100
batch = 2
crop = 32
auct.base_channels = 16
auct.cond_channels = 8
auct.n_blocks = 2
le.width = 8
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--count", "3", "--size", "64", "--out", str(root / "data"), "--seed", "1"]) == 0
    (root / "small.cfg").write_text(SMALL_CFG, encoding="utf-8")
    assert main(["train", "--data", str(root / "data"), "--config", str(root / "small.cfg"),
                 "--out", str(root / "run")]) == 0
    return root


def test_synth_layout(workspace):
    sdr = sorted(p.name for p in (workspace / "data" / "sdr").iterdir())
    hdr = sorted(p.name for p in (workspace / "data" / "hdr").iterdir())
    assert sdr == hdr and len(sdr) == 3
    assert read_png(workspace / "data" / "sdr" / sdr[0])[1] == 8
    assert read_png(workspace / "data" / "hdr" / hdr[0])[1] == 16


def test_train_outputs(workspace):
    ck = ckpt_io.load(workspace / "run" / "checkpoint.fhdr")
    assert ck.meta["iteration"] == 3 and ck.model_config.le.width == 8
    rows = [r.split() for r in (workspace / "run" / "loss_curve.txt").read_text().splitlines()]
    assert [len(r) for r in rows] == [2, 2, 2]


def test_train_synthetic_and_resume(workspace, tmp_path, capsys):
    five = tmp_path / "five.cfg"
    five.write_text(SMALL_CFG.replace("total_iters = 3", "total_iters = 5"), encoding="utf-8")
    base = ["train", "--synthetic", "2", "--size", "48", "--config"]
    assert main(base + [str(five), "--out", str(tmp_path / "full")]) == 0
    assert "done: 5 iterations" in capsys.readouterr().out
    assert main(base + [str(workspace / "small.cfg"), "--out", str(tmp_path / "part")]) == 0
    assert main(base + [str(five), "--out", str(tmp_path / "part"),
                        "--resume", str(tmp_path / "part" / "checkpoint.fhdr")]) == 0
    full = (tmp_path / "full" / "loss_curve.txt").read_text()
    assert full == (tmp_path / "part" / "loss_curve.txt").read_text()
    assert len(full.splitlines()) == 5
    a = ckpt_io.load(tmp_path / "full" / "checkpoint.fhdr").tensors
    b = ckpt_io.load(tmp_path / "part" / "checkpoint.fhdr").tensors
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_convert_writes_16bit_and_is_idempotent(workspace, tmp_path):
    src = sorted((workspace / "data" / "sdr").iterdir())[0]
    ck = workspace / "run" / "checkpoint.fhdr"
    for name in ("a.png", "b.png"):
        assert main(["convert", "--input", str(src), "--output", str(tmp_path / name), "--checkpoint", str(ck)]) == 0
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    img, bits = read_png(tmp_path / "a.png")
    assert bits == 16 and img.shape == (3, 64, 64)
    assert main(["convert", "--input", str(src), "--output", str(tmp_path / "t.png"), "--checkpoint", str(ck),
                 "--tile", "32", "--halo", "20"]) == 0
    tiled, _ = read_png(tmp_path / "t.png")
    assert np.abs(tiled - img).max() <= 1 / 65535


def test_convert_stage_auct(workspace, tmp_path):
    src = sorted((workspace / "data" / "sdr").iterdir())[1]
    assert main(["convert", "--input", str(src), "--output", str(tmp_path / "m.png"),
                 "--checkpoint", str(workspace / "run" / "checkpoint.fhdr"), "--stage", "auct"]) == 0


def test_eval_report_text_and_json(workspace, tmp_path, capsys):
    pred = tmp_path / "pred"
    shutil.copytree(workspace / "data" / "hdr", pred)
    report = tmp_path / "report.txt"
    assert main(["eval", "--pred", str(pred), "--ref", str(workspace / "data" / "hdr"), "--report", str(report),
                 "--checkpoint", str(workspace / "run" / "checkpoint.fhdr")]) == 0
    out = capsys.readouterr().out
    assert out == report.read_text()
    assert "(identical)" in out and "mean" in out
    data = json.loads((tmp_path / "report.json").read_text())
    agg = data["aggregate"]
    assert agg["count"] == 3 and agg["ssim"] == 1.0 and agg["delta_e_itp"] == 0.0
    assert abs(agg["srsim"] - 1) <= 1e-9
    assert agg["params"] == ckpt_io.load(workspace / "run" / "checkpoint.fhdr").param_count
    assert agg["macs"] > 0
    assert all(img["identical"] for img in data["images"])


def test_eval_errors(workspace, tmp_path):
    (tmp_path / "pred").mkdir()
    ref = str(workspace / "data" / "hdr")
    assert main(["eval", "--pred", str(tmp_path / "pred"), "--ref", ref, "--report", str(tmp_path / "r.txt")]) == 2
    write_png(tmp_path / "pred" / "other.png", np.zeros((3, 64, 64)), 16)
    assert main(["eval", "--pred", str(tmp_path / "pred"), "--ref", ref, "--report", str(tmp_path / "r.txt")]) == 2


def test_macs_output(capsys):
    assert main(["macs", "--height", "2160", "--width", "3840"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["macs 478668937984", "macs_g 478.67", "params 369340"]
    assert main(["macs", "--height", "64", "--width", "64", "--layers", "--stage", "auct"]) == 0
    out = capsys.readouterr().out
    assert "auct.base" in out and "le." not in out


def test_bench_output(workspace, capsys):
    assert main(["bench", "--height", "64", "--width", "64", "--runs", "1", "--tile", "32",
                 "--checkpoint", str(workspace / "run" / "checkpoint.fhdr")]) == 0
    out = capsys.readouterr().out
    assert "untiled_median_s" in out and "tiled_median_s" in out


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(l.startswith("PASS ") for l in lines)


@pytest.mark.parametrize("argv", [
    ["bogus"],
    [],
    ["macs", "--height", "0", "--width", "5"],
    ["macs", "--height", "x", "--width", "5"],
    ["convert", "--input", "a.png"],
    ["bench", "--height", "64", "--width", "64", "--halo", "4"],
    ["train", "--data", "d", "--synthetic", "3", "--out", "o"],
    ["train", "--data", "d", "--size", "32", "--out", "o"],
])
def test_usage_errors_exit_1(argv):
    try:
        code = main(argv)
    except SystemExit as e:
        code = e.code
    assert code == 1


def test_unknown_config_key_exit_1(tmp_path):
    (tmp_path / "c.cfg").write_text("learning_rate = 1\n", encoding="utf-8")
    assert main(["train", "--synthetic", "1", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path)]) == 1


def test_bad_threads_env_exit_1(monkeypatch):
    monkeypatch.setenv("FASTHDR_THREADS", "abc")
    assert main(["macs", "--height", "8", "--width", "8"]) == 1


def test_data_errors_exit_2(workspace, tmp_path):
    ck = str(workspace / "run" / "checkpoint.fhdr")
    assert main(["convert", "--input", str(tmp_path / "none.png"), "--output", str(tmp_path / "o.png"),
                 "--checkpoint", ck]) == 2
    write_png(tmp_path / "tiny.png", np.zeros((3, 12, 12)), 8)
    assert main(["convert", "--input", str(tmp_path / "tiny.png"), "--output", str(tmp_path / "o.png"),
                 "--checkpoint", ck]) == 2
    (tmp_path / "bad.fhdr").write_bytes(b"FHDR")
    assert main(["convert", "--input", str(tmp_path / "tiny.png"), "--output", str(tmp_path / "o.png"),
                 "--checkpoint", str(tmp_path / "bad.fhdr")]) == 2
    assert main(["train", "--data", str(tmp_path / "nodata"), "--out", str(tmp_path / "o")]) == 2


def test_numeric_failure_exit_3(workspace, tmp_path, monkeypatch):
    from fasthdr import ops
    real = ops.l1_loss

    def nan_loss(pred, target, weight=1.0):
        out = real(pred, target, weight)
        out.data = np.array(np.inf, np.float32)
        return out

    monkeypatch.setattr(ops, "l1_loss", nan_loss)
    assert main(["train", "--synthetic", "1", "--config", str(workspace / "small.cfg"),
                 "--out", str(tmp_path / "o")]) == 3
    assert (tmp_path / "o" / "checkpoint.fhdr").exists()


def test_entry_point_help_lists_subcommands_and_flags():
    res = subprocess.run([sys.executable, "-m", "fasthdr", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("convert", "train", "eval", "macs", "bench", "selftest", "synth"):
        assert cmd in res.stdout
    res = subprocess.run([sys.executable, "-m", "fasthdr", "convert", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for flag in ("--input", "--output", "--checkpoint", "--tile", "--halo", "--stage"):
        assert flag in res.stdout
    res = subprocess.run([sys.executable, "-m", "fasthdr", "nope"], capture_output=True, text=True)
    assert res.returncode == 1 and "invalid choice" in res.stderr
