"""On-disk synthetic datasets: clip files plus a JSON manifest with split tags and hashes."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List

import numpy as np

from .config import DataConfig
from .io import atomic_write_text, load_clip, save_clip
from .synthetic import gen_synthetic, random_spec

SPLITS = ("train", "val", "test")
MANIFEST = "manifest.json"


@dataclass
class ClipRecord:
    path: str
    split: str
    T: int
    H: int
    W: int
    C: int
    seed: int
    spec_hash: str
    sha256: str


@dataclass
class DatasetManifest:
    root: Path
    records: List[ClipRecord]

    def split(self, name: str) -> List[ClipRecord]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [r for r in self.records if r.split == name]

    def check_disjoint(self):
        seen = {}
        for r in self.records:
            for key in (r.path, r.spec_hash):
                if key in seen and seen[key] != r.split:
                    raise ValueError(f"{key} appears in splits {seen[key]!r} and {r.split!r}")
                seen[key] = r.split

    def load_split(self, name: str, verify: bool = True) -> np.ndarray:
        """Stack a split into ``(N, T, H, W, C)``; checks each file's hash when ``verify``."""
        clips = []
        for r in self.split(name):
            path = self.root / r.path
            if verify:
                digest = hashlib.sha256(path.read_bytes()).hexdigest()
                if digest != r.sha256:
                    raise ValueError(f"{r.path}: content hash mismatch")
            clips.append(load_clip(path))
        if not clips:
            raise ValueError(f"split {name!r} is empty")
        return np.stack(clips)

    def to_json(self) -> str:
        return json.dumps({"version": 1, "clips": [asdict(r) for r in self.records]}, indent=1)


def split_seeds(cfg: DataConfig) -> dict:
    """Non-overlapping seed ranges per split, offset by the dataset seed."""
    base = cfg.seed * 1_000_000
    counts = {"train": cfg.num_train, "val": cfg.num_val, "test": cfg.num_test}
    out, start = {}, base
    for name in SPLITS:
        out[name] = list(range(start, start + counts[name]))
        start += counts[name]
    return out


def _spec(seed: int, cfg: DataConfig, T: int, H: int, W: int, C: int):
    return random_spec(seed, H=H, W=W, T=T, C=C, max_sprites=cfg.max_sprites,
                       sprite_sizes=tuple(cfg.sprite_sizes), background=cfg.background)


def generate_arrays(cfg: DataConfig, split: str, T: int = 8, H: int = 32, W: int = 32, C: int = 3) -> np.ndarray:
    """Render a split in memory as ``(N, T, H, W, C)`` float32."""
    return np.stack([gen_synthetic(_spec(s, cfg, T, H, W, C))[0] for s in split_seeds(cfg)[split]])


def generate_dataset(root, cfg: DataConfig, T: int = 8, H: int = 32, W: int = 32, C: int = 3) -> DatasetManifest:
    root = Path(root)
    records = []
    for split, seeds in split_seeds(cfg).items():
        for seed in seeds:
            spec = _spec(seed, cfg, T, H, W, C)
            frames, _ = gen_synthetic(spec)
            rel = f"{split}/clip_{seed:08d}.clip"
            save_clip(root / rel, frames)
            digest = hashlib.sha256((root / rel).read_bytes()).hexdigest()
            records.append(ClipRecord(rel, split, T, H, W, C, seed, spec.digest(), digest))
    manifest = DatasetManifest(root, records)
    manifest.check_disjoint()
    atomic_write_text(root / MANIFEST, manifest.to_json())
    return manifest


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    data = json.loads((root / MANIFEST).read_text())
    manifest = DatasetManifest(root, [ClipRecord(**r) for r in data["clips"]])
    manifest.check_disjoint()
    return manifest
