import numpy as np
import pytest
import torch

from moso.config import MosoConfig, TransformerConfig, TransformerTrainConfig, VQVAEConfig, VQVAETrainConfig
from moso.synthetic import gen_synthetic, random_spec

torch.set_num_threads(1)


def tiny_config(T=8, N_t=2, K=4, N=16, D=8, H=32, W=32, f_m=8, f_s=4, f_o=4) -> MosoConfig:
    cfg = MosoConfig(name="tiny")
    cfg.vqvae = VQVAEConfig(T=T, H=H, W=W, C=3, f_o=f_o, f_s=f_s, f_m=f_m, N_t=N_t, codebook_size=N,
                            codebook_dim=D, residual_depth=1, base_channels=4, max_channels=8)
    cfg.vqvae_train = VQVAETrainConfig(learning_rate=1e-3, total_steps=20, batch_size=2, preproc_handoff_step=2,
                                       discriminator_start_step=4, use_video_disc=True, log_every=5,
                                       checkpoint_every=10)
    cfg.transformer = TransformerConfig(K=K, so_blocks=1, m_blocks=1, heads=2, embedding_dim=12, hidden_dim=16,
                                        intermediate_dim=32, dropout=0.0)
    cfg.transformer_train = TransformerTrainConfig(learning_rate=1e-3, batch_size=4, total_steps=10, log_every=5,
                                                   checkpoint_every=5)
    return cfg


def sprite_clips(n, seed0=0, T=8, H=32, W=32):
    arr = np.stack([gen_synthetic(random_spec(seed0 + i, H=H, W=W, T=T))[0] for i in range(n)])
    return torch.from_numpy(arr).permute(0, 1, 4, 2, 3).contiguous()


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def clips8():
    return sprite_clips(8)


def pytest_terminal_summary(terminalreporter):
    import sys

    lines = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
