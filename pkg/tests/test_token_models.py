import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import sprite_clips, tiny_config
from moso.generation import (GenerationTrace, Predictor, generate_motion, manipulate, mask_for_training,
                             swap_scene)
from moso.token_models import TokenModels, mask_count, mask_schedule
from moso.train_transformer import (TransformerTrainer, encode_pairs, fit_transformer, load_transformer,
                                    motion_loss, so_loss)
from moso.vqvae import MosoVQVAE, TokenBundle


@pytest.fixture(scope="module")
def setup():
    torch.manual_seed(0)
    cfg = tiny_config()
    vqvae = MosoVQVAE(cfg.vqvae).eval()
    clips = sprite_clips(8, seed0=100)
    pairs = encode_pairs(vqvae, clips, cfg.transformer.K)
    models = TokenModels(cfg.transformer, cfg.vqvae.codebook_size, vqvae.grid_shapes).eval()
    return cfg, vqvae, clips, pairs, models


def test_schedule_endpoints_and_monotone():
    assert mask_schedule(0) == 1.0 and mask_schedule(1) == 0.0
    r = torch.linspace(0, 1, 1001, dtype=torch.float64)
    g = mask_schedule(r)
    assert g[0] == 1 and g[-1] == 0 and torch.all(g[1:] <= g[:-1])
    assert mask_schedule(0.5) == pytest.approx(math.cos(math.pi / 4))
    with pytest.raises(ValueError):
        mask_schedule(0.5, "linear")


def test_mask_count_rounds_half_up():
    assert mask_count(0.5, 3) == 2 and mask_count(0.25, 2) == 1 and mask_count(1.2, 5) == 5
    assert mask_count(-0.1, 5) == 0


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_training_mask_count_and_region(r, K, seed):
    motion = torch.randint(0, 5, (2, 6, 2, 3))
    masked, mask = mask_for_training(motion, K, torch.full((2,), r), 5, torch.Generator().manual_seed(seed))
    L = (6 - K) * 6
    want = mask_count(mask_schedule(r), L)
    assert mask.flatten(1).sum(1).tolist() == [want, want]
    assert not mask[:, :K].any()
    assert torch.equal(masked[mask], torch.full((2 * want,), 5))
    assert torch.equal(masked[~mask], motion[~mask])


def test_training_mask_extremes():
    motion = torch.zeros(1, 4, 2, 2, dtype=torch.long)
    _, all_mask = mask_for_training(motion, 1, torch.zeros(1), 9)
    assert all_mask[:, 1:].all()
    _, none = mask_for_training(motion, 1, torch.ones(1), 9)
    assert not none.any()
    _, half = mask_for_training(torch.zeros(1, 2, 10, 10, dtype=torch.long), 1, torch.full((1,), 0.5), 9)
    assert int(half.sum()) == round(math.cos(math.pi / 4) * 100)


def test_guidance_shape_and_query_permutation(setup):
    cfg, _, _, pairs, models = setup
    so = models.so_g
    h = so.forward_g(pairs.target.scene[:2], pairs.target.object[:2])
    assert h.shape == (2, 8, cfg.transformer.hidden_dim)
    assert torch.equal(h, so.forward_g(pairs.target.scene[:2], pairs.target.object[:2]))
    perm = torch.randperm(8)
    with torch.no_grad():
        original = so.queries.clone()
        so.queries.copy_(original[perm])
        permuted = so.forward_g(pairs.target.scene[:2], pairs.target.object[:2])
        so.queries.copy_(original)
    torch.testing.assert_close(permuted, h[:, perm], rtol=1e-5, atol=1e-5)


def test_untrained_losses_near_uniform():
    cfg = tiny_config(N=64)
    torch.manual_seed(0)
    models = TokenModels(cfg.transformer, 64, {"scene": (4, 4), "object": (4, 4), "motion": (8, 2, 2)}).eval()
    with torch.no_grad():
        for lin in (models.so_g.head, models.motion.head):
            lin.weight.mul_(0.01)
            lin.bias.zero_()
    tok = lambda *s: torch.randint(0, 64, s)
    target = TokenBundle(tok(3, 4, 4), tok(3, 4, 4), tok(3, 8, 2, 2))
    l_so = so_loss(models, target, target).detach()
    assert abs(float(l_so) - math.log(64)) < 0.05
    g = models.so_g.forward_g(target.scene, target.object)
    masked, mask = mask_for_training(target.motion, 4, torch.zeros(3), 64)
    assert abs(float(motion_loss(models, masked, mask, g, target.motion).detach()) - math.log(64)) < 0.05
    assert motion_loss(models, target.motion, torch.zeros_like(mask), g, target.motion) is None


def test_single_token_vocabulary_has_zero_loss():
    cfg = tiny_config(N=1)
    models = TokenModels(cfg.transformer, 1, {"scene": (2, 2), "object": (2, 2), "motion": (8, 1, 1)})
    z = TokenBundle(torch.zeros(2, 2, 2, dtype=torch.long), torch.zeros(2, 2, 2, dtype=torch.long),
                    torch.zeros(2, 8, 1, 1, dtype=torch.long))
    assert float(so_loss(models, z, z).detach()) == 0.0


def test_loss_ignores_what_masked_slots_held(setup):
    cfg, _, _, pairs, models = setup
    g = models.so_g.forward_g(pairs.target.scene[:2], pairs.target.object[:2])
    motion = pairs.target.motion[:2]
    r = torch.full((2,), 0.3)
    masked, mask = mask_for_training(motion, 4, r, models.mask_id, torch.Generator().manual_seed(1))
    other = torch.where(mask, torch.zeros_like(motion), motion)  # different hidden values, same masking
    masked2, _ = mask_for_training(other, 4, r, models.mask_id, torch.Generator().manual_seed(1))
    assert torch.equal(masked, masked2)
    assert torch.equal(motion_loss(models, masked, mask, g, motion), motion_loss(models, masked2, mask, g, motion))


def _generate(models, pairs, S=16, seed=0, remask="random", trace=None):
    g = models.so_g.forward_g(pairs.target.scene[:2], pairs.target.object[:2])
    fixed = torch.zeros(1, 8, 4, 4, dtype=torch.bool)
    fixed[:, :4] = True
    return generate_motion(models, g, pairs.pseudo.motion[:2], fixed, S=S, remask=remask,
                           generator=torch.Generator().manual_seed(seed), trace=trace)


@pytest.mark.parametrize("remask", ["random", "confidence"])
def test_generation_contract(setup, remask):
    _, _, _, pairs, models = setup
    trace = GenerationTrace()
    out = _generate(models, pairs, remask=remask, trace=trace)
    assert not (out == models.mask_id).any()
    assert out.min() >= 0 and out.max() < models.vocab
    assert torch.equal(out[:, :4], pairs.pseudo.motion[:2, :4])
    L = 4 * 16
    assert trace.masked_counts == [L] + [mask_count(mask_schedule(s / 16), L) for s in range(1, 17)]
    assert torch.equal(out, _generate(models, pairs, remask=remask))
    assert not torch.equal(out, _generate(models, pairs, seed=1, remask=remask))


def test_single_step_samples_everything(setup):
    _, _, _, pairs, models = setup
    trace = GenerationTrace()
    out = _generate(models, pairs, S=1, trace=trace)
    assert trace.masked_counts == [64, 0] and not (out == models.mask_id).any()


def test_generation_rejects_bad_args(setup):
    _, _, _, pairs, models = setup
    with pytest.raises(ValueError):
        _generate(models, pairs, S=0)
    with pytest.raises(ValueError):
        _generate(models, pairs, remask="greedy")


def test_predict_and_long(setup):
    cfg, vqvae, clips, _, models = setup
    pred = Predictor(vqvae, models, cfg.generation)
    out = pred.predict(clips[:2, :4], seed=0)
    assert out.shape == (2, 4, 3, 32, 32)
    assert torch.equal(out, pred.predict(clips[:2, :4], seed=0))
    long = pred.predict_long(clips[:1, :4], 3)
    assert long.shape[1] == 4 + 3 * 4
    assert torch.equal(long[:, :4], clips[:1, :4])
    assert torch.equal(pred.predict_long(clips[:1, :4], 1)[:, 4:], pred.predict(clips[:1, :4], seed=0))
    with pytest.raises(ValueError):
        pred.predict(clips[:1], seed=0)
    with pytest.raises(ValueError):
        pred.predict(clips[:1, :3], seed=0)


def test_interpolation(setup):
    cfg, vqvae, clips, _, models = setup
    pred = Predictor(vqvae, models, cfg.generation)
    x = clips[:1]
    all_known = torch.ones(8, dtype=torch.bool)
    assert pred.interpolate_tokens(x, all_known).equal(vqvae.encode(x))
    known = torch.tensor([1, 0, 0, 1, 1, 0, 0, 1], dtype=torch.bool)
    tok = pred.interpolate_tokens(x, known, seed=2)
    assert not (tok.motion == models.mask_id).any()
    filled = x.clone()
    for t in (1, 2):
        filled[:, t] = x[:, 0]
    for t in (5, 6):
        filled[:, t] = x[:, 4]
    ref = vqvae.encode(filled)
    assert torch.equal(tok.motion[:, known], ref.motion[:, known])
    with pytest.raises(ValueError):
        pred.interpolate_tokens(x, torch.zeros(8, dtype=torch.bool))


def test_unconditional_requires_variant(setup):
    cfg, vqvae, _, _, models = setup
    with pytest.raises(ValueError):
        Predictor(vqvae, models, cfg.generation).generate_unconditional()


def test_unconditional_training_and_sampling(setup, tmp_path):
    cfg, vqvae, _, pairs, _ = setup
    cfg = tiny_config()
    cfg.transformer.unconditional = True
    cfg.transformer_train.uncond_prob = 0.5
    tr = fit_transformer(cfg, pairs, cfg.vqvae.codebook_size, vqvae.grid_shapes, tmp_path, steps=3,
                         log=lambda s: None)
    pred = Predictor(vqvae, tr.models.eval(), cfg.generation)
    a = pred.generate_unconditional(1, seed=0)
    assert a.shape == (1, 8, 3, 32, 32)
    assert torch.equal(a, pred.generate_unconditional(1, seed=0))


def test_manipulate(setup):
    _, vqvae, clips, _, _ = setup
    bx, by = vqvae.encode(clips[:1]), vqvae.encode(clips[1:2])
    recon = vqvae.decode_tokens(bx)
    assert torch.equal(manipulate(bx, bx, vqvae), recon)
    assert torch.equal(manipulate(swap_scene(swap_scene(bx, by), bx), bx, vqvae), recon)
    swapped = swap_scene(bx, by)
    assert torch.equal(swapped.scene, by.scene) and torch.equal(swapped.motion, bx.motion)
    bad = TokenBundle(by.scene[:, :4], by.object, by.motion)
    with pytest.raises(ValueError):
        swap_scene(bx, bad)


def test_transformer_training_reduces_loss_and_round_trips(setup, tmp_path):
    cfg, vqvae, _, pairs, _ = setup
    cfg = tiny_config()
    cfg.transformer_train.total_steps = 60
    cfg.transformer_train.log_every = 20
    tr = fit_transformer(cfg, pairs, cfg.vqvae.codebook_size, vqvae.grid_shapes, tmp_path, steps=60,
                         log=lambda s: None)
    lines = (tmp_path / "transformer_metrics.jsonl").read_text().splitlines()
    assert len(lines) == 3
    import json
    first, last = json.loads(lines[0]), json.loads(lines[-1])
    assert last["so"] < first["so"]
    models, _ = load_transformer(tmp_path / "transformer.ckpt")
    tr.models.eval()
    g1 = tr.models.so_g.forward_g(pairs.target.scene[:1], pairs.target.object[:1])
    g2 = models.so_g.forward_g(pairs.target.scene[:1], pairs.target.object[:1])
    assert torch.equal(g1, g2)


def test_pseudo_tokens_equal_targets_on_given_frames(setup):
    cfg, _, _, pairs, _ = setup
    assert torch.equal(pairs.pseudo.motion[:, :4], pairs.target.motion[:, :4])


def test_augment_clips_are_symmetries():
    from moso.train_transformer import augment_clips

    clips = sprite_clips(3, seed0=900)
    out = augment_clips(clips, 4, seed=1)
    assert out.shape == (15, 8, 3, 32, 32)
    assert torch.equal(out[:3], clips)
    assert torch.equal(out, augment_clips(clips, 4, seed=1))
    assert torch.equal(augment_clips(clips, 0), clips)
    # each copy holds the same multiset of pixel values as its source clip
    for k in range(1, 5):
        for i in range(3):
            a, b = out[3 * k + i].flatten().sort().values, clips[i].flatten().sort().values
            assert torch.equal(a, b)
    # pixel-value mass per frame is preserved up to time order
    sums = clips.sum((2, 3, 4))
    for k in range(1, 5):
        for i in range(3):
            s = out[3 * k + i].sum((1, 2, 3))
            assert torch.allclose(s, sums[i], rtol=1e-4) or torch.allclose(s, sums[i].flip(0), rtol=1e-4)
