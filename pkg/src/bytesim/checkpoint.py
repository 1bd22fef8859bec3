"""Binary checkpoint format.

Layout: 8-byte magic, u32 format version, u32 JSON length + UTF-8 metadata
block (model config plus free-form harness fields), u32 parameter count, then
per parameter: u16 name length + name, u8 ndim, u32 dims, raw float32
little-endian values. Round-trips byte-exactly for float32 models; float64
(gradient-check) models are stored as float32 and load back as float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams, init_params

MAGIC = b"BSIMCKPT"
VERSION = 1


def save_checkpoint(path: str | Path, params: ModelParams, extra: dict | None = None):
    # the stored config always describes `params`, whatever extra carries
    meta = {**(extra or {}), "config": params.config.to_dict()}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    plist = params.parameters()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(plist)))
        for p in plist:
            name = p.name.encode("utf-8")
            f.write(struct.pack("<H", len(name)))
            f.write(name)
            f.write(struct.pack("<B", p.data.ndim))
            for d in p.data.shape:
                f.write(struct.pack("<I", d))
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    """Rebuild a model in float32; raises on any shape/name mismatch."""
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(meta_len).decode("utf-8"))
        config = ModelConfig.from_dict(meta["config"])
        params = init_params(config, seed=0, dtype=np.float32)
        expected = {p.name: p for p in params.parameters()}
        (count,) = struct.unpack("<I", f.read(4))
        if count != len(expected):
            raise ValueError(
                f"checkpoint has {count} tensors, config implies {len(expected)}"
            )
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            if name not in expected:
                raise ValueError(f"unexpected tensor {name!r} in checkpoint")
            target = expected[name]
            if tuple(target.data.shape) != shape:
                raise ValueError(
                    f"shape mismatch for {name}: file {shape}, config {tuple(target.data.shape)}"
                )
            raw = f.read(int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4)
            target.data = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
            target.grad = np.zeros_like(target.data)
    return params, meta
