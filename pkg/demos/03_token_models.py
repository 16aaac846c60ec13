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
# # Stage two: masked token modelling and iterative decoding
#
# Prediction works on tokens. The first K frames are padded to a full clip by
# repeating the last one (the pseudo video), tokenized, and the motion tokens
# of the later frames are filled in by a bidirectional transformer over a few
# parallel decoding steps. A second transformer predicts the clip's scene and
# object tokens and summarizes them into guidance vectors for the motion model.

# %%
import math

import torch

from moso.config import MosoConfig, TransformerConfig, TransformerTrainConfig, VQVAEConfig
from moso.dataset import generate_arrays
from moso.generation import GenerationTrace, Predictor, make_pseudo, mask_for_training, pool_partition
from moso.token_models import TokenModels, mask_count, mask_schedule
from moso.train_transformer import encode_pairs, fit_transformer
from moso.video import to_tensor
from moso.vqvae import MosoVQVAE

torch.manual_seed(0)
torch.set_num_threads(1)

# %% [markdown]
# ## Pseudo videos
#
# With K=2 given frames and T=4 the last given frame is repeated twice.

# %%
frames = torch.arange(2, dtype=torch.float32).view(1, 2, 1, 1, 1)
print(make_pseudo(frames, 4).flatten().tolist())

# %% [markdown]
# Motion tokens of the given frames only match between clip and pseudo video
# if no motion pool straddles frame K. For c given-frame pools this fixes the
# number of pools to cT/K:

# %%
for T, K, c in ((16, 8, 1), (20, 10, 2), (8, 4, 1), (12, 2, 1)):
    print(f"T={T:2d} K={K:2d} c={c}: N_t={pool_partition(T, K, c)}")

# %% [markdown]
# ## The mask schedule
#
# Training masks a random share gamma(r) of the maskable positions. At
# generation step s the same curve sets how many stay masked.

# %%
S, L = 16, 64
print([round(float(mask_schedule(s / S)), 3) for s in range(0, S + 1, 4)])
print("still masked after each step:", [mask_count(mask_schedule(s / S), L) for s in range(1, S + 1)])
motion = torch.randint(0, 10, (1, 8, 2, 4))
masked, mask = mask_for_training(motion, K=4, r=torch.tensor([0.5]), mask_id=10)
print(f"r=0.5 masks {int(mask.sum())} of 32 future positions; cos(pi/4)*32 = {math.cos(math.pi / 4) * 32:.1f}")

# %% [markdown]
# ## Training on tokens from a frozen tokenizer
#
# The tokenizer here is untrained, which is enough to exercise the pipeline.
# The ``desk`` config and the acceptance tests do the real run.

# %%
cfg = MosoConfig(name="demo")
cfg.vqvae = VQVAEConfig(T=8, H=32, W=32, N_t=2, codebook_size=32, codebook_dim=8, residual_depth=1,
                        base_channels=4, max_channels=8)
cfg.transformer = TransformerConfig(K=4, so_blocks=1, m_blocks=1, heads=2, embedding_dim=32, hidden_dim=32,
                                    intermediate_dim=64, dropout=0.0)
cfg.transformer_train = TransformerTrainConfig(learning_rate=1e-3, batch_size=8, total_steps=60, log_every=20)
cfg.data.num_train, cfg.data.num_test = 32, 4
vqvae = MosoVQVAE(cfg.vqvae).eval()
train = to_tensor(generate_arrays(cfg.data, "train"))
pairs = encode_pairs(vqvae, train, cfg.transformer.K)
trainer = fit_transformer(cfg, pairs, cfg.vqvae.codebook_size, vqvae.grid_shapes, log=print)

# %% [markdown]
# ## Generating
#
# Sixteen steps leave no mask symbol behind, the given frames keep their
# tokens, and a seed reproduces a sample exactly.

# %%
pred = Predictor(vqvae, trainer.models.eval(), cfg.generation)
previous = to_tensor(generate_arrays(cfg.data, "test"))[:, :4]
trace = GenerationTrace()
tokens = pred.predict_tokens(previous, seed=1, trace=trace)
print("masked counts:", trace.masked_counts)
given = vqvae.encode(make_pseudo(previous, 8)).motion[:, :4]
print("given frames unchanged:", torch.equal(tokens.motion[:, :4], given))
print("seeded repeat identical:", torch.equal(pred.predict(previous, seed=1), pred.predict(previous, seed=1)))
print("prediction shape:", tuple(pred.predict(previous, seed=1).shape))
