import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import tiny_config
from moso.cli import build_parser, main
from moso.config import dump_config
from moso.io import load_clip, save_clip
from moso.synthetic import gen_synthetic, random_spec

SUBCOMMANDS = ["decompose", "train-vqvae", "train-transformer", "predict", "predict-long", "generate",
               "interpolate", "manipulate", "visualize-components", "eval", "gen-data"]


def test_every_subcommand_has_help(capsys):
    for name in SUBCOMMANDS:
        with pytest.raises(SystemExit) as exc:
            main([name, "--help"])
        assert exc.value.code == 0
    assert all(name in build_parser().format_help() for name in SUBCOMMANDS)


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_console_script_module_runs():
    out = subprocess.run([sys.executable, "-m", "moso.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("moso ")


def test_decompose_writes_partition(tmp_path):
    frames, _ = gen_synthetic(random_spec(3))
    save_clip(tmp_path / "in.clip", frames)
    assert main(["decompose", "--input", str(tmp_path / "in.clip"), "--out", str(tmp_path / "d")]) == 0
    from moso.io import import_frames
    scene, obj = import_frames(tmp_path / "d" / "scene"), import_frames(tmp_path / "d" / "object")
    assert scene.shape == frames.shape
    assert np.abs(scene + obj - frames).max() <= 1 / 255 + 1e-6  # PNG frames are 8-bit


def test_missing_input_is_reported(tmp_path, capsys):
    assert main(["decompose", "--input", str(tmp_path / "nope.clip"), "--out", str(tmp_path)]) == 1
    assert "moso decompose: error:" in capsys.readouterr().err


def test_eval_best_of(tmp_path, capsys):
    rng = np.random.default_rng(0)
    truth = rng.random((8, 16, 16, 3)).astype(np.float32)
    save_clip(tmp_path / "truth.clip", truth)
    trials = tmp_path / "trials"
    for i, noise in enumerate((0.2, 0.05, 0.1)):
        save_clip(trials / f"t{i}.clip", np.clip(truth[4:] + noise * rng.standard_normal((4, 16, 16, 3)), 0, 1))
    assert main(["eval", "--pred", str(trials), "--truth", str(tmp_path / "truth.clip"), "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["trials"] == 3 and len(rep["psnr_frames"]) == 4
    best = load_clip(trials / "t1.clip")
    from moso.metrics import psnr
    assert rep["psnr"] == pytest.approx(psnr(best, truth[4:]))
    assert main(["eval", "--pred", str(trials / "t1.clip"), "--truth", str(tmp_path / "truth.clip")]) == 0
    assert capsys.readouterr().out.startswith("psnr=")


def test_gen_data_manifest(tmp_path):
    cfg_path = tmp_path / "tiny.yaml"
    cfg_path.write_text(dump_config(tiny_config()))
    out = tmp_path / "data"
    assert main(["gen-data", "--config", str(cfg_path), "--out", str(out), "--num-train", "3", "--num-val", "1",
                 "--num-test", "2"]) == 0
    from moso.dataset import load_manifest
    m = load_manifest(out)
    assert [len(m.split(s)) for s in ("train", "val", "test")] == [3, 1, 2]
    assert m.load_split("test").shape == (2, 8, 32, 32, 3)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Tiny stage-one and stage-two checkpoints made through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    cfg = tiny_config()
    cfg.data.num_train, cfg.data.num_test = 4, 2
    (root / "tiny.yaml").write_text(dump_config(cfg))
    cfg.transformer.unconditional = True
    (root / "tiny_u.yaml").write_text(dump_config(cfg))
    conf = str(root / "tiny.yaml")
    assert main(["gen-data", "--config", conf, "--out", str(root / "data")]) == 0
    assert main(["train-vqvae", "--config", conf, "--data", str(root / "data"), "--out", str(root / "run"),
                 "--steps", "2"]) == 0
    for name, c in (("run", conf), ("run_u", str(root / "tiny_u.yaml"))):
        assert main(["train-transformer", "--config", c, "--data", str(root / "data"), "--out", str(root / name),
                     "--vqvae", str(root / "run" / "vqvae.ckpt"), "--steps", "2"]) == 0
    return root


def _stage_two_args(root, run="run"):
    return ["--vqvae", str(root / "run" / "vqvae.ckpt"), "--transformer", str(root / run / "transformer.ckpt")]


def test_cli_stage_two_commands(trained):
    root = trained
    clip = root / "data" / "test" / sorted(p.name for p in (root / "data" / "test").iterdir())[0]
    a2 = _stage_two_args(root)
    assert main(["predict", *a2, "--input", str(clip), "--out", str(root / "p.clip")]) == 0
    assert load_clip(root / "p.clip").shape == (4, 32, 32, 3)
    assert main(["predict", *a2, "--input", str(clip), "--out", str(root / "p2.clip")]) == 0
    assert np.array_equal(load_clip(root / "p.clip"), load_clip(root / "p2.clip"))
    assert main(["predict-long", *a2, "--input", str(clip), "--n-clips", "2", "--out", str(root / "l.clip")]) == 0
    assert load_clip(root / "l.clip").shape[0] == 4 + 2 * 4
    assert main(["interpolate", *a2, "--input", str(clip), "--known", "0,3,7", "--out", str(root / "i.clip")]) == 0
    assert main(["manipulate", "--vqvae", str(root / "run" / "vqvae.ckpt"), "--object-from", str(clip),
                 "--scene-from", str(clip), "--out", str(root / "m.clip")]) == 0
    assert main(["visualize-components", "--vqvae", str(root / "run" / "vqvae.ckpt"), "--input", str(clip),
                 "--out", str(root / "viz")]) == 0
    assert {p.name for p in (root / "viz").iterdir()} == {"reconstruction", "scene", "object", "object_motion",
                                                          "scene_motion"}
    # the conditional model refuses unconditional sampling
    assert main(["generate", *a2, "--out", str(root / "g.clip")]) == 1
    assert main(["generate", *_stage_two_args(root, "run_u"), "--num", "2", "--out", str(root / "g")]) == 0
    assert len(list((root / "g").iterdir())) == 2


def test_cli_rejects_bad_interpolation_index(trained):
    clip = next((trained / "data" / "test").iterdir())
    assert main(["interpolate", *_stage_two_args(trained), "--input", str(clip), "--known", "0,99",
                 "--out", str(trained / "bad.clip")]) == 1
