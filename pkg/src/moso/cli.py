"""Command-line entry point: ``moso <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import dump_config, home_dir, load_config
from .io import CheckpointError, atomic_write_text, export_frames, motion_to_unit, read_clip_any, save_clip
from .video import to_numpy, to_tensor

log = logging.getLogger("moso")


def _write_clip(path, frames):
    """Save a ``(T, H, W, C)`` clip as a clip file, or as PNG frames if ``path`` has no suffix."""
    path = Path(path)
    if path.suffix:
        save_clip(path, frames)
    else:
        export_frames(path, frames)
    print(f"wrote {path}")


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.vqvae_train.seed = cfg.transformer_train.seed = args.seed
    return cfg


def _training_clips(args, cfg, split="train"):
    from .dataset import generate_arrays, load_manifest

    if args.data:
        arr = load_manifest(args.data).load_split(split)
    else:
        v = cfg.vqvae
        arr = generate_arrays(cfg.data, split, v.T, v.H, v.W, v.C)
    return to_tensor(arr)


def _stage_two(args):
    from .generation import Predictor
    from .train_transformer import load_transformer
    from .train_vqvae import load_vqvae

    vqvae, _ = load_vqvae(args.vqvae)
    models, cfg = load_transformer(args.transformer)
    if args.config:
        cfg.generation = load_config(args.config).generation
    if getattr(args, "steps", None):
        cfg.generation.S = args.steps
    return Predictor(vqvae, models, cfg.generation), cfg


# -- subcommands ----------------------------------------------------------

def cmd_decompose(args):
    from .decompose import decompose

    comps = decompose(read_clip_any(args.input), c_lb=args.c_lb, c_ub=args.c_ub)
    out = Path(args.out)
    _write_clip(out / "motion", motion_to_unit(comps.motion))
    _write_clip(out / "scene", comps.scene)
    _write_clip(out / "object", comps.object)
    _write_clip(out / "mask", comps.object_mask[..., None].astype(np.float32))
    return 0


def cmd_train_vqvae(args):
    from .train_vqvae import VQVAETrainer, fit_vqvae

    cfg = _config(args)
    out = Path(args.out or home_dir() / cfg.name)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.yaml", dump_config(cfg))
    trainer = VQVAETrainer(cfg)
    if args.resume:
        trainer.load(args.resume)
    fit_vqvae(cfg, _training_clips(args, cfg), out, steps=args.steps, trainer=trainer, log=print)
    print(f"wrote {out / 'vqvae.ckpt'}")
    return 0


def cmd_train_transformer(args):
    from .train_transformer import fit_transformer, training_pairs
    from .train_vqvae import load_vqvae

    cfg = _config(args)
    vqvae, _ = load_vqvae(args.vqvae)
    out = Path(args.out or home_dir() / cfg.name)
    pairs = training_pairs(vqvae, _training_clips(args, cfg), cfg)
    vocab = vqvae.cfg.codebook_size
    fit_transformer(cfg, pairs, vocab, vqvae.grid_shapes, out, steps=args.steps, log=print)
    print(f"wrote {out / 'transformer.ckpt'}")
    return 0


def cmd_predict(args):
    pred, cfg = _stage_two(args)
    K = cfg.transformer.K
    clip = read_clip_any(args.input)
    if len(clip) < K:
        raise ValueError(f"input has {len(clip)} frames, the model needs K={K}")
    frames = pred.predict(to_tensor(clip[:K]), seed=args.seed)
    _write_clip(args.out, to_numpy(frames)[0])
    return 0


def cmd_predict_long(args):
    pred, cfg = _stage_two(args)
    K = cfg.transformer.K
    clip = read_clip_any(args.input)
    frames = pred.predict_long(to_tensor(clip[:K]), args.n_clips, seed=args.seed)
    _write_clip(args.out, to_numpy(frames)[0])
    return 0


def cmd_generate(args):
    pred, _ = _stage_two(args)
    frames = to_numpy(pred.generate_unconditional(args.num, seed=args.seed))
    if args.num == 1:
        _write_clip(args.out, frames[0])
    else:
        for i, clip in enumerate(frames):
            _write_clip(Path(args.out) / f"sample_{i:03d}", clip)
    return 0


def cmd_interpolate(args):
    pred, _ = _stage_two(args)
    clip = read_clip_any(args.input)
    known = torch.zeros(pred.T, dtype=torch.bool)
    for t in args.known.split(","):
        known[int(t)] = True
    if len(clip) != pred.T:
        raise ValueError(f"input must have T={pred.T} frames (gap frames may hold anything)")
    _write_clip(args.out, to_numpy(pred.interpolate(to_tensor(clip), known, seed=args.seed))[0])
    return 0


def cmd_manipulate(args):
    from .generation import manipulate
    from .train_vqvae import load_vqvae

    vqvae, _ = load_vqvae(args.vqvae)
    bx = vqvae.encode(to_tensor(read_clip_any(args.object_from)))
    by = vqvae.encode(to_tensor(read_clip_any(args.scene_from)))
    _write_clip(args.out, to_numpy(manipulate(bx, by, vqvae))[0])
    return 0


def cmd_visualize(args):
    from .train_vqvae import load_vqvae

    vqvae, _ = load_vqvae(args.vqvae)
    tokens = vqvae.encode(to_tensor(read_clip_any(args.input)))
    out = Path(args.out)
    _write_clip(out / "reconstruction", to_numpy(vqvae.decode_tokens(tokens))[0])
    for which in ("scene", "object", "object+motion", "scene+motion"):
        _write_clip(out / which.replace("+", "_"), to_numpy(vqvae.decode_component(tokens, which))[0])
    return 0


def cmd_eval(args):
    from .metrics import evaluate_best_of

    truth = read_clip_any(args.truth)
    pred = Path(args.pred)
    if pred.is_dir() and not any(pred.glob("frame_*.png")):
        entries = sorted(p for p in pred.iterdir() if p.suffix == ".clip" or p.is_dir())
        trials = [read_clip_any(p) for p in entries]
    else:
        trials = [read_clip_any(pred)]
    trials = trials[:args.trials] if args.trials else trials
    if not trials:
        raise ValueError(f"no predictions found in {pred}")
    n = len(trials[0])
    if n < len(truth):
        truth = truth[-n:]  # predictions cover the frames after the given ones
    report = evaluate_best_of(trials, truth)
    text = report.to_text()
    if args.json:
        text = json.dumps({"psnr": report.psnr, "ssim": report.ssim, "trials": report.trials,
                           "psnr_frames": report.psnr_frames, "ssim_frames": report.ssim_frames}) + "\n"
    sys.stdout.write(text)
    return 0


def cmd_gen_data(args):
    from .dataset import generate_dataset

    cfg = _config(args)
    if args.seed is not None:
        cfg.data.seed = args.seed
    for name in ("num_train", "num_val", "num_test"):
        if getattr(args, name) is not None:
            setattr(cfg.data, name, getattr(args, name))
    v = cfg.vqvae
    out = Path(args.out or home_dir() / "data" / cfg.name)
    manifest = generate_dataset(out, cfg.data, v.T, v.H, v.W, v.C)
    print(f"wrote {len(manifest.records)} clips and {out / 'manifest.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moso", description="Motion/scene/object video tokenization and prediction.")
    p.add_argument("--version", action="version", version=f"moso {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=fn)
        return sp

    def stage_two(sp):
        sp.add_argument("--config", help="config name or YAML path overriding generation settings")
        sp.add_argument("--vqvae", required=True, help="stage-one checkpoint")
        sp.add_argument("--transformer", required=True, help="stage-two checkpoint")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--steps", type=int, help="generation iterations S")
        sp.add_argument("--out", required=True, help="output clip file, or directory for PNG frames")

    sp = add("decompose", cmd_decompose, "split a clip into motion, scene and object videos")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--clb", "--c-lb", dest="c_lb", type=float, default=0.1)
    sp.add_argument("--cub", "--c-ub", dest="c_ub", type=float, default=0.9)

    for name, fn, text in (("train-vqvae", cmd_train_vqvae, "train the stage-one tokenizer"),
                           ("train-transformer", cmd_train_transformer, "train the stage-two token models")):
        sp = add(name, fn, text)
        sp.add_argument("--config", default="desk")
        sp.add_argument("--data", help="dataset directory with a manifest (default: render synthetic clips)")
        sp.add_argument("--out", help="run directory (default: $MOSO_HOME/<config name>)")
        sp.add_argument("--steps", type=int)
        sp.add_argument("--seed", type=int)
        if name == "train-vqvae":
            sp.add_argument("--resume", help="checkpoint to continue from")
        else:
            sp.add_argument("--vqvae", required=True, help="frozen stage-one checkpoint")

    sp = add("predict", cmd_predict, "predict the frames after the first K of a clip")
    stage_two(sp)
    sp.add_argument("--input", required=True)
    sp = add("predict-long", cmd_predict_long, "roll prediction forward over several clips")
    stage_two(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--n-clips", type=int, default=2)
    sp = add("generate", cmd_generate, "sample clips without conditioning frames")
    stage_two(sp)
    sp.add_argument("--num", type=int, default=1)
    sp = add("interpolate", cmd_interpolate, "fill in missing frames of a clip")
    stage_two(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--known", required=True, help="comma-separated 0-based indices of known frames")

    sp = add("manipulate", cmd_manipulate, "render the objects and motion of one clip over the scene of another")
    sp.add_argument("--vqvae", required=True)
    sp.add_argument("--object-from", required=True)
    sp.add_argument("--scene-from", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("visualize-components", cmd_visualize, "decode each token component on its own")
    sp.add_argument("--vqvae", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "best-of-N PSNR/SSIM of predictions against ground truth")
    sp.add_argument("--pred", required=True, help="prediction clip, PNG directory, or directory of trials")
    sp.add_argument("--truth", required=True)
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--json", action="store_true")

    sp = add("gen-data", cmd_gen_data, "render a synthetic sprite dataset with a manifest")
    sp.add_argument("--config", default="desk")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--num-train", type=int)
    sp.add_argument("--num-val", type=int)
    sp.add_argument("--num-test", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "seed", None) is not None:
        torch.manual_seed(args.seed)
        np.random.seed(args.seed % 2 ** 32)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, CheckpointError, IndexError) as err:
        print(f"moso {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
