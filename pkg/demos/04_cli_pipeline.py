# ---
# jupyter:
#   jupytext:
#     formats: ipynb,py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#       jupytext_version: 1.16.0
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---
# %% [markdown]
# # Prediction, evaluation and editing from the command line
#
# The ``moso`` command drives the whole pipeline. Each call below is the same
# as running ``moso <subcommand> ...`` in a shell. Step counts are cut far
# down so the walk-through finishes in a couple of minutes; drop the
# ``--steps`` flags for the full ``desk`` schedule.

# %%
import json
import tempfile
from pathlib import Path

import numpy as np

from moso.cli import main
from moso.io import load_clip, save_clip
from moso.metrics import psnr

work = Path(tempfile.mkdtemp(prefix="moso-demo-"))
run = work / "run"
print(work)

# %% [markdown]
# ## Data and training

# %%
main(["gen-data", "--config", "desk", "--out", str(work / "data"), "--num-train", "64", "--num-test", "4"])
main(["train-vqvae", "--config", "desk", "--data", str(work / "data"), "--out", str(run), "--steps", "100"])
main(["train-transformer", "--config", "desk", "--data", str(work / "data"), "--out", str(run),
      "--vqvae", str(run / "vqvae.ckpt"), "--steps", "100"])
models = ["--vqvae", str(run / "vqvae.ckpt"), "--transformer", str(run / "transformer.ckpt")]

# %% [markdown]
# ## Predicting the second half of a clip
#
# The model sees frames 0 to 3 and samples frames 4 to 7. Ten samples with
# different seeds go into one directory for best-of-N scoring.

# %%
clip = sorted((work / "data" / "test").iterdir())[0]
for seed in range(10):
    main(["predict", *models, "--input", str(clip), "--seed", str(seed), "--out", str(work / "pred" / f"s{seed}.clip")])
main(["eval", "--pred", str(work / "pred"), "--truth", str(clip)])

# %% [markdown]
# Copying the last given frame is the baseline to beat.

# %%
truth = load_clip(clip)
save_clip(work / "copy.clip", np.repeat(truth[3:4], 4, axis=0))
print(f"copy-last PSNR {psnr(load_clip(work / 'copy.clip'), truth[4:]):.2f} dB")

# %% [markdown]
# ## Longer rollouts, gap filling and scene swaps

# %%
main(["predict-long", *models, "--input", str(clip), "--n-clips", "3", "--out", str(work / "long.clip")])
print("rollout length", len(load_clip(work / "long.clip")))
main(["interpolate", *models, "--input", str(clip), "--known", "0,1,6,7", "--out", str(work / "fill.clip")])
other = sorted((work / "data" / "test").iterdir())[1]
main(["manipulate", "--vqvae", str(run / "vqvae.ckpt"), "--object-from", str(clip), "--scene-from", str(other),
      "--out", str(work / "swap")])
main(["visualize-components", "--vqvae", str(run / "vqvae.ckpt"), "--input", str(clip), "--out", str(work / "viz")])
print(sorted(p.name for p in (work / "viz").iterdir()))

# %% [markdown]
# Training metrics are JSON lines next to the checkpoints.

# %%
last = json.loads((run / "vqvae_metrics.jsonl").read_text().splitlines()[-1])
print({k: round(v, 4) if isinstance(v, float) else v for k, v in last.items()})
