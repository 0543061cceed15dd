import json

import numpy as np
import pytest

from tdrg import numeric as nm
from tdrg.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main

SMALL = ["--set", "structural.layers=1", "--set", "structural.heads=2", "--set", "structural.c_t=16",
         "--set", "semantic.c_g=16", "--set", "structural.ffn_dim=16", "--set", "backbone.width=4",
         "--set", "backbone.channels=16", "--set", "structural.max_side=4"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--out", str(root / "data"), "--set", "data.n_train=16",
                 "--set", "data.n_test=8"]) == EXIT_OK
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "ckpt"),
                 "--set", "train.epochs=1", "--set", "train.batch_size=8", *SMALL]) == EXIT_OK
    return root


def test_generate_layout(workspace):
    lines = (workspace / "data" / "train" / "manifest.txt").read_text().splitlines()
    assert len(lines) == 16 and len(lines[0].split()) == 1 + 8
    assert (workspace / "data" / "test" / "000007.tdrg").exists()


def test_train_writes_checkpoint(workspace):
    for name in ("params.bin", "momentum.bin", "config.cfg", "meta.json"):
        assert (workspace / "ckpt" / name).exists()
    assert "structural.layers = 1" in (workspace / "ckpt" / "config.cfg").read_text()


@pytest.mark.filterwarnings("ignore:classes without positives")
def test_eval_is_repeatable(workspace, capsys):
    out = workspace / "m.json"
    assert main(["eval", "--checkpoint", str(workspace / "ckpt"), "--data", str(workspace / "data"),
                 "--out", str(out)]) == EXIT_OK
    first = capsys.readouterr().out
    assert first.startswith("mAP=")
    main(["eval", "--checkpoint", str(workspace / "ckpt"), "--data", str(workspace / "data")])
    assert capsys.readouterr().out == first
    assert 0 <= json.loads(out.read_text())["mAP"] <= 1


def test_infer_exports_maps(workspace, capsys):
    maps = workspace / "maps"
    assert main(["infer", "--checkpoint", str(workspace / "ckpt"),
                 "--image", str(workspace / "data" / "test" / "000000.tdrg"), "--maps", str(maps)]) == EXIT_OK
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("class")]
    assert len(lines) == 8
    cams = nm.load_tensor(maps / "class_maps.tdrg")
    assert cams.shape == (8, 2, 2)
    assert nm.load_tensor(maps / "attention_1_16.tdrg").shape == (1, 2, 16, 16)


def test_infer_rejects_batch(workspace, tmp_path):
    nm.save_tensor(tmp_path / "two.tdrg", np.zeros((2, 3, 64, 64), np.float32))
    assert main(["infer", "--checkpoint", str(workspace / "ckpt"), "--image", str(tmp_path / "two.tdrg")]) == EXIT_CONFIG


@pytest.mark.parametrize("argv", [
    ["generate", "--out", "unused", "--set", "no.such.key=1"],
    ["generate", "--out", "unused", "--set", "data.image_size=48"],
    ["generate", "--out", "unused", "--set", "missing_equals"],
    ["gradcheck", "--set", "csa.combine=max"],
])
def test_config_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == EXIT_CONFIG


def test_config_file(tmp_path, workspace):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ntrain.epochs = 1\ntrain.batch_size = 16\nstructural.unit = none\n"
                   "backbone.scales = 32\ncsa.enabled = false\nsemantic.enabled = false\n")
    assert main(["train", "--config", str(cfg), "--data", str(workspace / "data"),
                 "--out", str(tmp_path / "ck")]) == EXIT_OK
    assert "structural.unit = none" in (tmp_path / "ck" / "config.cfg").read_text()


def test_missing_files_exit_4(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope"), "--data", str(tmp_path)]) == EXIT_IO
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == EXIT_IO


def test_nan_exits_3(workspace, tmp_path):
    argv = ["train", "--data", str(workspace / "data"), "--out", str(tmp_path / "ck"),
            "--set", "train.lr=1e12", "--set", "train.epochs=4", "--set", "train.batch_size=16", *SMALL]
    with np.errstate(all="ignore"):
        assert main(argv) == EXIT_NUMERIC


def test_gradcheck_small(capsys):
    argv = ["gradcheck", "--max-coords", "2", "--set", "backbone.scales=32", "--set", "csa.enabled=false",
            "--set", "semantic.enabled=false", "--set", "structural.unit=none"]
    assert main(argv) == EXIT_OK
    assert "parameters pass" in capsys.readouterr().out


def test_gradcheck_failure_exits_3(monkeypatch):
    from tdrg import cli

    class Bad:
        name, max_rel_err, checked, ok = "w", 1.0, 1, False

    monkeypatch.setattr(cli, "gradcheck_model", lambda *a, **k: [Bad()])
    assert main(["gradcheck"]) == EXIT_NUMERIC


def test_ablate_suite_choices():
    with pytest.raises(SystemExit):
        main(["ablate", "--suite", "nonsense", "--data", "x"])
