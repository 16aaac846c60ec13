"""Configuration dataclasses and YAML loading.

Field names follow the usual hyper-parameter table of the two stages
(``T``, ``f_o``, ``f_s``, ``f_m``, ``N_t``, ``batch_size``,
``learning_rate``, ``scheduler``, ``discriminator_start_step``) so that a
published setting can be transcribed into a YAML file line by line.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml


@dataclass
class DecomposeConfig:
    c_lb: float = 0.1
    c_ub: float = 0.9


@dataclass
class VQVAEConfig:
    T: int = 16
    H: int = 64
    W: int = 64
    C: int = 3
    f_o: int = 4
    f_s: int = 4
    f_m: int = 8
    N_t: int = 1
    codebook_size: int = 16384
    codebook_dim: int = 256
    share_codebook: bool = True
    ema_decay: float = 0.99
    ema_eps: float = 1e-5
    dead_patience: int = 50
    residual_depth: int = 4
    base_channels: int = 64
    max_channels: int = 256

    def validate(self):
        for name in ("f_o", "f_s", "f_m"):
            f = getattr(self, name)
            if f < 2 or f & (f - 1):
                raise ValueError(f"{name}={f} must be a power of two >= 2")
            if self.H % f or self.W % f:
                raise ValueError(f"{self.H}x{self.W} frames not divisible by {name}={f}")
        f_min = min(self.f_o, self.f_s, self.f_m)
        if (self.H // f_min) % 4 or (self.W // f_min) % 4:
            raise ValueError("the finest feature grid must be divisible by 4 for the merge module")
        if self.T % self.N_t:
            raise ValueError(f"T={self.T} not divisible by N_t={self.N_t}")
        return self


@dataclass
class VQVAETrainConfig:
    learning_rate: float = 2e-4
    scheduler: str = "cosine"
    total_steps: int = 250000
    batch_size: int = 24
    preproc_handoff_step: int = 50000
    discriminator_start_step: int = 50000
    commit_weight: float = 0.25
    commit_reduction: str = "mean"
    perceptual_weight: float = 1.0
    adv_weight: float = 0.1
    image_adv_weight: float = 0.0
    use_video_disc: bool = True
    use_image_disc: bool = False
    use_neg_ssim: bool = False
    ssim_weight: float = 1.0
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 50
    checkpoint_every: int = 1000

    def validate(self):
        for name in ("commit_weight", "perceptual_weight", "adv_weight", "image_adv_weight", "ssim_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.preproc_handoff_step > self.total_steps or self.discriminator_start_step > self.total_steps:
            raise ValueError("handoff and discriminator start steps must not exceed total_steps")
        if self.scheduler not in ("constant", "cosine"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.commit_reduction not in ("sum", "mean"):
            raise ValueError(f"unknown commit_reduction {self.commit_reduction!r}")
        return self


@dataclass
class TransformerConfig:
    K: int = 1
    c: int = 1
    so_blocks: int = 16
    m_blocks: int = 8
    heads: int = 8
    embedding_dim: int = 758
    hidden_dim: int = 1024
    intermediate_dim: int = 2048
    dropout: float = 0.1
    unconditional: bool = False


@dataclass
class TransformerTrainConfig:
    learning_rate: float = 1e-4
    scheduler: str = "cosine"
    batch_size: int = 32
    total_steps: int = 90000
    warmup_steps: int = 0
    uncond_prob: float = 0.0
    augment_copies: int = 0
    seed: int = 0
    log_every: int = 50
    checkpoint_every: int = 1000


@dataclass
class GenerationConfig:
    S: int = 16
    schedule: str = "cosine"
    temperature: float = 1.0
    so_temperature: float = 1.0
    remask: str = "random"


@dataclass
class DataConfig:
    num_train: int = 500
    num_val: int = 0
    num_test: int = 50
    seed: int = 0
    max_sprites: int = 2
    sprite_sizes: typing.List[int] = field(default_factory=lambda: [6, 10])
    background: str = "mixed"


@dataclass
class EvalConfig:
    trials: int = 10


@dataclass
class MosoConfig:
    name: str = "default"
    decompose: DecomposeConfig = field(default_factory=DecomposeConfig)
    vqvae: VQVAEConfig = field(default_factory=VQVAEConfig)
    vqvae_train: VQVAETrainConfig = field(default_factory=VQVAETrainConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    transformer_train: TransformerTrainConfig = field(default_factory=TransformerTrainConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        self.vqvae.validate()
        self.vqvae_train.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(tp, value, where):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if origin in (list, typing.List):
        (item,) = typing.get_args(tp)
        return [_coerce(item, v, where) for v in value]
    if tp is bool:
        if not isinstance(value, bool):
            raise ValueError(f"{where}: expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or int(value) != value:
            raise ValueError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if tp is float:
        # YAML 1.1 reads "2e-4" as a string; accept it as a float.
        return float(value)
    if tp is str:
        return str(value)
    return value


def _build(cls, data, where=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError(f"{where or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"{where or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}".lstrip(".")) for k, v in data.items()}
    return cls(**kwargs)


def config_from_dict(data: dict) -> MosoConfig:
    return _build(MosoConfig, data).validate()


def load_config(path) -> MosoConfig:
    """Load a YAML config file; bare names resolve to the shipped configs."""
    path = Path(path)
    if not path.exists() and not path.suffix:
        path = Path(str(resources.files("moso") / "configs" / f"{path}.yaml"))
    with open(path) as fh:
        return config_from_dict(yaml.safe_load(fh) or {})


def dump_config(cfg: MosoConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def shipped_configs() -> list:
    return sorted(p.name[:-5] for p in resources.files("moso").joinpath("configs").iterdir()
                  if p.name.endswith(".yaml"))


def home_dir() -> Path:
    """Root for data and checkpoints; override with ``MOSO_HOME``."""
    return Path(os.environ.get("MOSO_HOME", Path.cwd() / "moso_runs"))
