import json

import numpy as np
import pytest
import yaml

from moso.config import (DataConfig, MosoConfig, config_from_dict, dump_config, home_dir, load_config,
                         shipped_configs)
from moso.dataset import generate_dataset, load_manifest, split_seeds


def test_dataset_manifest(tmp_path):
    cfg = DataConfig(num_train=4, num_val=2, num_test=3, seed=1)
    m = generate_dataset(tmp_path, cfg)
    assert len(m.split("train")) == 4 and len(m.split("test")) == 3
    loaded = load_manifest(tmp_path)
    arr = loaded.load_split("train")
    assert arr.shape == (4, 8, 32, 32, 3)
    seeds = split_seeds(cfg)
    assert not set(seeds["train"]) & set(seeds["test"])
    # tampering is caught
    rec = loaded.split("val")[0]
    path = tmp_path / rec.path
    data = bytearray(path.read_bytes())
    data[-1] ^= 1
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError):
        loaded.load_split("val")
    with pytest.raises(ValueError):
        loaded.split("holdout")


def test_overlapping_splits_rejected(tmp_path):
    generate_dataset(tmp_path, DataConfig(num_train=2, num_val=0, num_test=1))
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["clips"][2]["spec_hash"] = manifest["clips"][0]["spec_hash"]
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ValueError):
        load_manifest(tmp_path)


def test_shipped_reference_configs():
    names = shipped_configs()
    assert {"bair64", "kth64", "robonet64", "desk"} <= set(names)
    for name in ("bair64", "kth64", "robonet64"):
        cfg = load_config(name)
        assert cfg.vqvae_train.learning_rate == 2e-4
        assert cfg.vqvae.codebook_size == 16384 and cfg.vqvae.codebook_dim == 256
        assert cfg.generation.S == 16
        assert (cfg.decompose.c_lb, cfg.decompose.c_ub) == (0.1, 0.9)
        assert cfg.vqvae_train.discriminator_start_step == 50000


def test_nt_per_dataset():
    assert load_config("bair64").vqvae.N_t == 1
    assert load_config("robonet64").vqvae.N_t == 6
    assert load_config("kth64").vqvae.N_t == 2


def test_yaml_round_trip_and_errors(tmp_path):
    cfg = MosoConfig()
    again = config_from_dict(yaml.safe_load(dump_config(cfg)))
    assert again.to_dict() == cfg.to_dict()
    with pytest.raises(ValueError):
        config_from_dict({"vqvae": {"nonsense": 1}})
    with pytest.raises(ValueError):
        config_from_dict({"vqvae": {"T": 2.5}})
    with pytest.raises(ValueError):
        config_from_dict({"vqvae": {"f_m": 6}})
    p = tmp_path / "c.yaml"
    p.write_text("vqvae_train:\n  learning_rate: 2e-4\n")
    assert load_config(p).vqvae_train.learning_rate == 2e-4


def test_home_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv("MOSO_HOME", str(tmp_path))
    assert home_dir() == tmp_path
