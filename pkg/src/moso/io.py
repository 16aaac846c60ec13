"""Clip files, image sequences and checkpoint containers.

Clip file layout (little endian)::

    magic "MOSOCLIP" | u16 version | u32 T, H, W, C | u8 bit depth | raw samples

Bit depth 32 stores float32 samples verbatim; 8 and 16 store rounded
unsigned integers. Checkpoints are a JSON header followed by the raw bytes
of every named array; the header records a SHA-256 digest of that payload.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .video import validate_frames

CLIP_MAGIC = b"MOSOCLIP"
CLIP_VERSION = 1
_CLIP_HEADER = struct.Struct("<8sHIIIIB")
CKPT_MAGIC = b"MOSOCKPT"
CKPT_VERSION = 1
_CKPT_PREFIX = struct.Struct("<8sIQ")
_SAMPLE_TYPES = {8: np.dtype("<u1"), 16: np.dtype("<u2"), 32: np.dtype("<f4")}


class CheckpointError(ValueError):
    pass


class DigestMismatchError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode())


# -- clips ---------------------------------------------------------------

def encode_clip(frames, bit_depth: int = 32) -> bytes:
    frames = validate_frames(frames)
    if bit_depth not in _SAMPLE_TYPES:
        raise ValueError(f"bit depth must be one of {sorted(_SAMPLE_TYPES)}")
    T, H, W, C = frames.shape
    if bit_depth == 32:
        samples = frames.astype("<f4")
    else:
        scale = 2 ** bit_depth - 1
        samples = np.round(frames.astype(np.float64) * scale).astype(_SAMPLE_TYPES[bit_depth])
    return _CLIP_HEADER.pack(CLIP_MAGIC, CLIP_VERSION, T, H, W, C, bit_depth) + samples.tobytes()


def decode_clip(data: bytes) -> np.ndarray:
    if len(data) < _CLIP_HEADER.size:
        raise ValueError("clip file too short for its header")
    magic, version, T, H, W, C, depth = _CLIP_HEADER.unpack_from(data)
    if magic != CLIP_MAGIC:
        raise ValueError("not a clip file (bad magic)")
    if version != CLIP_VERSION:
        raise ValueError(f"unsupported clip file version {version}")
    if depth not in _SAMPLE_TYPES:
        raise ValueError(f"unsupported bit depth {depth}")
    dtype = _SAMPLE_TYPES[depth]
    n = T * H * W * C
    body = data[_CLIP_HEADER.size:]
    if len(body) != n * dtype.itemsize:
        raise ValueError(f"clip payload has {len(body)} bytes, expected {n * dtype.itemsize}")
    samples = np.frombuffer(body, dtype=dtype).reshape(T, H, W, C)
    if depth == 32:
        return samples.astype(np.float32)
    return (samples.astype(np.float64) / (2 ** depth - 1)).astype(np.float32)


def save_clip(path, frames, bit_depth: int = 32):
    atomic_write_bytes(path, encode_clip(frames, bit_depth))


def load_clip(path) -> np.ndarray:
    return decode_clip(Path(path).read_bytes())


def export_frames(directory, frames, prefix: str = "frame"):
    """Write one 8-bit PNG per frame."""
    from PIL import Image

    frames = validate_frames(frames)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(frames):
        img = np.round(frame * 255).astype(np.uint8)
        img = img[..., 0] if img.shape[-1] == 1 else img
        tmp = directory / f".{prefix}_{t:04d}.png.tmp"
        Image.fromarray(img).save(tmp, format="PNG")
        os.replace(tmp, directory / f"{prefix}_{t:04d}.png")


def import_frames(directory, prefix: str = "frame") -> np.ndarray:
    from PIL import Image

    paths = sorted(Path(directory).glob(f"{prefix}_*.png"))
    if not paths:
        raise FileNotFoundError(f"no {prefix}_*.png frames in {directory}")
    frames = []
    for p in paths:
        arr = np.asarray(Image.open(p))
        frames.append(arr[..., None] if arr.ndim == 2 else arr[..., :3])
    return (np.stack(frames).astype(np.float32) / 255.0)


def read_clip_any(path) -> np.ndarray:
    """Load a clip file, or a directory of PNG frames."""
    path = Path(path)
    return import_frames(path) if path.is_dir() else load_clip(path)


def motion_to_unit(motion: np.ndarray) -> np.ndarray:
    """Map a signed motion video from [-2, 2] to [0, 1] for viewing."""
    return np.clip((np.asarray(motion) + 2) / 4, 0, 1).astype(np.float32)


# -- checkpoints -----------------------------------------------------------

@dataclass
class Checkpoint:
    arrays: dict
    config: dict
    step: int
    kind: str
    digest: str
    extra: dict


def _to_numpy(v) -> np.ndarray:
    if isinstance(v, torch.Tensor):
        v = v.detach().cpu().numpy()
    return np.asarray(v)  # tobytes() writes C order; ascontiguousarray would turn 0-d into 1-d


def encode_checkpoint(arrays: dict, config: dict, step: int = 0, kind: str = "model", extra: dict | None = None) -> bytes:
    index, chunks, offset = [], [], 0
    for name in sorted(arrays):
        arr = _to_numpy(arrays[name])
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        raw = arr.astype(dtype, copy=False).tobytes()
        index.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": CKPT_VERSION,
        "kind": kind,
        "step": int(step),
        "config": config,
        "extra": extra or {},
        "arrays": index,
        "payload_bytes": len(payload),
        "digest": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True).encode()
    return _CKPT_PREFIX.pack(CKPT_MAGIC, CKPT_VERSION, len(head)) + head + payload


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < _CKPT_PREFIX.size:
        raise DigestMismatchError("checkpoint truncated before its header")
    magic, version, head_len = _CKPT_PREFIX.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != CKPT_VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, expected {CKPT_VERSION}")
    start = _CKPT_PREFIX.size
    try:
        header = json.loads(data[start:start + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise DigestMismatchError(f"checkpoint header unreadable (truncated or corrupt): {err}") from None
    payload = data[start + head_len:]
    if len(payload) != header["payload_bytes"] or hashlib.sha256(payload).hexdigest() != header["digest"]:
        raise DigestMismatchError(
            f"checkpoint digest mismatch: payload has {len(payload)} bytes, header declares {header['payload_bytes']}")
    arrays = {}
    for rec in header["arrays"]:
        buf = payload[rec["offset"]:rec["offset"] + rec["nbytes"]]
        arrays[rec["name"]] = np.frombuffer(buf, dtype=np.dtype(rec["dtype"])).reshape(rec["shape"]).copy()
    return Checkpoint(arrays, header["config"], header["step"], header["kind"], header["digest"], header["extra"])


def save_checkpoint(path, arrays: dict, config: dict, step: int = 0, kind: str = "model", extra: dict | None = None) -> str:
    """Atomically write a checkpoint; returns its payload digest."""
    data = encode_checkpoint(arrays, config, step, kind, extra)
    atomic_write_bytes(path, data)
    return decode_checkpoint(data).digest


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def module_arrays(module: torch.nn.Module, prefix: str = "") -> dict:
    return {prefix + k: v for k, v in module.state_dict().items()}


def load_into(module: torch.nn.Module, arrays: dict, prefix: str = ""):
    """Copy ``arrays`` into ``module``; raise listing every missing or misshapen array."""
    state = module.state_dict()
    problems = []
    for name, tensor in state.items():
        key = prefix + name
        if key not in arrays:
            problems.append(f"{key}: missing")
        elif tuple(arrays[key].shape) != tuple(tensor.shape):
            problems.append(f"{key}: checkpoint {tuple(arrays[key].shape)} vs model {tuple(tensor.shape)}")
    extra = sorted(k for k in arrays if k.startswith(prefix) and k[len(prefix):] not in state)
    problems += [f"{k}: unexpected" for k in extra]
    if problems:
        raise ShapeMismatchError("checkpoint does not fit the model:\n  " + "\n  ".join(problems))
    module.load_state_dict({k: torch.as_tensor(arrays[prefix + k]).to(v.dtype) for k, v in state.items()})
