import json
import re
import subprocess
import sys

import numpy as np
import pytest

from lungkit.cli import main
from lungkit.phantoms import write_phantom_dataset
from lungkit.raster import load_image, save_image

SUBCOMMANDS = ["preprocess", "genmask", "train-seg", "train-clf", "train-hybrid", "eval", "cv", "selftest", "config"]
CITATION = re.compile(r"table \d|eq\.|equation|section|§|et al", re.IGNORECASE)


def test_selftest_exit_zero(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "0 failed" in out and "FAIL" not in out


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "lungkit.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("lungkit ")


def test_usage_errors_exit_two(capsys):
    assert main(["frobnicate"]) == 2
    assert main([]) == 2
    assert main(["eval", "--pred", "x"]) == 2


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_text(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    text = capsys.readouterr().out
    assert not CITATION.search(text)


def test_help_shows_config_defaults(capsys):
    assert main(["train-seg", "--help"]) == 0
    text = capsys.readouterr().out
    assert "train.epochs" in text and "config default: 50" in text


def _mask(tmp, name, rows):
    m = np.zeros((8, 8), np.uint8)
    m[rows] = 255
    save_image(m, tmp / name)


def test_eval_report(tmp_path):
    (tmp_path / "p").mkdir()
    (tmp_path / "t").mkdir()
    _mask(tmp_path / "p", "a.pgm", slice(0, 4))
    _mask(tmp_path / "t", "a_mask.pgm", slice(0, 4))
    _mask(tmp_path / "p", "b.pgm", slice(0, 2))
    _mask(tmp_path / "t", "b.pgm", slice(0, 4))
    rep = tmp_path / "r.json"
    assert main(["eval", "--pred", str(tmp_path / "p"), "--truth", str(tmp_path / "t"), "--report", str(rep)]) == 0
    doc = json.loads(rep.read_text())
    per = {r["name"]: r for r in doc["per_image"]}
    assert per["a"]["dice"] == 1.0
    assert per["b"]["dice"] == pytest.approx(2 * 16 / 48)
    assert doc["summary"]["dice"]["mean"] == pytest.approx((1 + 2 / 3) / 2)


def test_eval_unmatched_stem(tmp_path, capsys):
    (tmp_path / "p").mkdir()
    (tmp_path / "t").mkdir()
    _mask(tmp_path / "p", "a.pgm", slice(0, 4))
    _mask(tmp_path / "p", "lonely.pgm", slice(0, 4))
    _mask(tmp_path / "t", "a.pgm", slice(0, 4))
    assert main(["eval", "--pred", str(tmp_path / "p"), "--truth", str(tmp_path / "t"), "--report", str(tmp_path / "r.json")]) == 1
    assert "lonely" in capsys.readouterr().err


def test_preprocess_and_genmask(tmp_path):
    write_phantom_dataset(tmp_path / "d", n=4, seed=0, size=128)
    assert main(["preprocess", "--in", str(tmp_path / "d"), "--out", str(tmp_path / "pp"), "--size", "64"]) == 0
    outs = sorted((tmp_path / "pp").glob("*.pgm"))
    assert len(outs) == 4 and load_image(outs[0]).shape == (64, 64)
    assert main(["genmask", "--in", str(tmp_path / "d"), "--out", str(tmp_path / "gm")]) == 0
    report = json.loads((tmp_path / "gm" / "genmask_report.json").read_text())
    assert len(report) == 4
    for rec in report:
        assert rec["components"] == 2
        assert 0.05 <= rec["area_fraction"] <= 0.40
    assert len(list((tmp_path / "gm").glob("*_mask.pgm"))) == 4


def test_bad_config_exit_one(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"preprocess": {"clahe_clip": -1}}')
    assert main(["config", "--config", str(cfg)]) == 1
    assert "clahe_clip" in capsys.readouterr().err


def test_config_prints_effective(capsys):
    assert main(["config"]) == 0
    assert json.loads(capsys.readouterr().out)["train"]["lr"] == 1e-3


def test_train_clf_then_hybrid(tmp_path):
    write_phantom_dataset(tmp_path / "d", n=8, seed=2, size=64)
    common = ["--dataset", str(tmp_path / "d"), "--size", "16", "--epochs", "1"]
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"cnn_widths": [2], "cnn_dense": 4, "rf_estimators": 3}}))
    assert main(["train-clf", "--config", str(cfg), "--out", str(tmp_path / "clf"), *common]) == 0
    bundle = tmp_path / "clf" / "model.lkmb"
    assert bundle.is_file()
    args = ["train-hybrid", "--config", str(cfg), "--features-from", str(bundle), "--head", "rf", "--out", str(tmp_path / "hy")]
    assert main(args + common) == 0
    assert (tmp_path / "hy" / "hybrid.lkmb").is_file()
