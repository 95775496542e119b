import hashlib
import json

import numpy as np
import pytest
from PIL import Image

from dgspnet.cli import run
from dgspnet.config import Config, apply_overrides, load_config, toy_config
from dgspnet.data import read_png, write_png
from dgspnet.errors import ConfigurationError


def _digest(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_gen_data_twice_identical(tmp_path):
    for name in ("a", "b"):
        assert run(["gen-data", "--out", str(tmp_path / name), "--count", "8",
                    "--size", "64", "--seed", "7"]) == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_gen_data_env_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("DGSP_SEED", "7")
    assert run(["gen-data", "--out", str(tmp_path / "env"), "--count", "3"]) == 0
    assert run(["gen-data", "--out", str(tmp_path / "flag"), "--count", "3", "--seed", "7"]) == 0
    assert _digest(tmp_path / "env") == _digest(tmp_path / "flag")


def test_eval_identity_prints_table_row(tmp_path, synth_root, capsys):
    masks = str(synth_root / "masks")
    assert run(["eval", "--pred-dir", masks, "--gt-dir", masks,
                "--report", str(tmp_path / "r.json")]) == 0
    assert capsys.readouterr().out.strip() == "iou=100.00 pd=100.00 fa=0.000"
    assert json.loads((tmp_path / "r.json").read_text())["pd"] == 1.0


def test_eval_json_stdout(synth_root, capsys):
    masks = str(synth_root / "masks")
    assert run(["eval", "--pred-dir", masks, "--gt-dir", masks, "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert (out["iou"], out["pd"], out["fa"]) == (1.0, 1.0, 0.0)


def test_train_predict_eval_round(tmp_path, synth_root, capsys):
    out = tmp_path / "run"
    assert run(["train", "--data", str(synth_root), "--out", str(out),
                "--set", "train.max_steps=4", "--set", "train.eval_every=0"]) == 0
    ckpt = out / "last.ckpt"
    assert ckpt.exists()
    mask_path = tmp_path / "pred.png"
    assert run(["predict", "--checkpoint", str(ckpt),
                "--image", str(synth_root / "images" / "synth_00000.png"),
                "--out", str(mask_path)]) == 0
    with Image.open(mask_path) as im:
        mask = np.array(im)
    assert mask.shape == (64, 64) and mask.dtype == np.uint8
    assert set(np.unique(mask)) <= {0, 255}
    capsys.readouterr()
    assert run(["eval", "--checkpoint", str(ckpt), "--data", str(synth_root), "--json"]) == 0
    assert set(json.loads(capsys.readouterr().out)) >= {"iou", "pd", "fa"}


def test_predict_odd_size_image(tmp_path, synth_root):
    out = tmp_path / "run"
    assert run(["train", "--data", str(synth_root), "--out", str(out),
                "--set", "train.max_steps=1", "--set", "train.eval_every=0"]) == 0
    write_png(tmp_path / "odd.png", (np.random.default_rng(0).random((50, 70)) * 255).astype(np.uint8))
    assert run(["predict", "--checkpoint", str(out / "last.ckpt"), "--image", str(tmp_path / "odd.png"),
                "--out", str(tmp_path / "odd_mask.png")]) == 0
    assert read_png(tmp_path / "odd_mask.png").shape == (50, 70)


def test_exit_codes(tmp_path, capsys):
    assert run(["bogus"]) == 1
    assert run(["gen-data"]) == 1
    assert run(["train", "--out", str(tmp_path), "--set", "train.nope=1"]) == 2
    assert run(["eval", "--pred-dir", str(tmp_path / "none"), "--gt-dir", str(tmp_path)]) == 2
    assert run(["eval"]) == 1
    assert run(["predict", "--checkpoint", str(tmp_path / "missing.ckpt"),
                "--image", "x.png", "--out", "y.png"]) == 2


@pytest.mark.parametrize("cmd,flags", [
    ("gen-data", ["--out", "--count", "--size", "--seed"]),
    ("train", ["--config", "--preset", "--data", "--out", "--set", "--resume", "--init"]),
    ("pretrain", ["--config", "--set", "--resume"]),
    ("eval", ["--checkpoint", "--pred-dir", "--gt-dir", "--threshold", "--match-radius", "--json"]),
    ("predict", ["--checkpoint", "--image", "--out", "--threshold"]),
])
def test_help_lists_flags(cmd, flags, capsys):
    assert run([cmd, "--help"]) == 0
    text = capsys.readouterr().out
    for f in flags:
        assert f in text
    assert "default" in text


def test_top_level_help(capsys):
    assert run(["--help"]) == 0
    text = capsys.readouterr().out
    for cmd in ("gen-data", "pretrain", "train", "eval", "predict"):
        assert cmd in text


# config ---------------------------------------------------------------------------

def test_override_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"lr": 0.5, "batch_size": 2}}))
    cfg = load_config(path, ["train.lr=0.25"], base_overrides=["train.batch_size=8", "train.seed=3"])
    assert cfg.train.lr == 0.25 and cfg.train.batch_size == 2 and cfg.train.seed == 3


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigurationError):
        apply_overrides(toy_config(), ["model.depth=3"])
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"learning_rate": 1}}))
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_override_coercion():
    cfg = apply_overrides(toy_config(), ["train.lr=1", "model.widths=[8,8,16,16,32]",
                                         "data.root=some/dir", "train.max_steps=null"])
    assert isinstance(cfg.train.lr, float) and cfg.model.widths == [8, 8, 16, 16, 32]
    assert cfg.data.root == "some/dir" and cfg.train.max_steps is None


def test_config_dict_round_trip():
    cfg = toy_config()
    assert Config.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("override", ["train.crop=60", "model.n_tokens=5", "model.scene=moon",
                                      "train.phase=eval", "model.widths=[4,8]"])
def test_invalid_values(override):
    with pytest.raises(ConfigurationError):
        apply_overrides(toy_config(), [override])


@pytest.mark.parametrize("name", ["toy", "full"])
def test_shipped_configs_match_presets(name):
    from pathlib import Path
    path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.json"
    assert load_config(path, preset=name) == load_config(None, preset=name)
    assert Config.from_dict(json.loads(path.read_text())).to_dict() == json.loads(path.read_text())
