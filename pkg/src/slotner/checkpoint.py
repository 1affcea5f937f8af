"""Checkpoint persistence.

Layout: one header line ``slotner-checkpoint <version> <manifest-bytes>``,
then a UTF-8 JSON manifest, then the raw little-endian float32 payloads of
every named array concatenated in manifest order. Each manifest entry
records ``name``, ``shape`` and byte ``offset`` into the payload block.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, SlotNER
from .template import Vocab

MAGIC = "slotner-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, model: SlotNER, vocab: Vocab, types: list[str], extra: dict | None = None) -> None:
    arrays = []
    payload = bytearray()
    for name, tensor in model.state_dict().items():
        data = tensor.detach().cpu().numpy().astype("<f4", copy=False)
        arrays.append({"name": name, "shape": list(data.shape), "offset": len(payload)})
        payload += data.tobytes(order="C")
    manifest = {
        "format_version": VERSION,
        "config": model.config.to_dict(),
        "vocab": vocab.to_dict(),
        "types": list(types),
        "arrays": arrays,
        "extra": extra or {},
    }
    text = json.dumps(manifest, indent=1).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {VERSION} {len(text)}\n".encode("ascii"))
        fh.write(text)
        fh.write(bytes(payload))


def load_checkpoint(path: str | Path) -> tuple[SlotNER, Vocab, list[str], dict]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    try:
        magic, version, size = raw[:nl].decode("ascii").split()
        version, size = int(version), int(size)
    except ValueError:
        raise CheckpointError(f"{path}: not a checkpoint file") from None
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    manifest = json.loads(raw[nl + 1:nl + 1 + size].decode("utf-8"))
    payload = memoryview(raw)[nl + 1 + size:]
    config = ModelConfig(**manifest["config"])
    model = SlotNER(config)
    expected = model.state_dict()
    state = {}
    for entry in manifest["arrays"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected array {name!r}")
        if tuple(expected[name].shape) != shape:
            raise CheckpointError(f"{path}: array {name!r} has shape {shape}, config implies {tuple(expected[name].shape)}")
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        data = np.frombuffer(payload[start:start + 4 * count], dtype="<f4")
        if data.size != count:
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        state[name] = torch.from_numpy(data.reshape(shape).astype(np.float32))
    missing = set(expected) - set(state)
    if missing:
        raise CheckpointError(f"{path}: missing arrays {sorted(missing)}")
    model.load_state_dict(state)
    return model, Vocab.from_dict(manifest["vocab"]), manifest["types"], manifest.get("extra", {})
