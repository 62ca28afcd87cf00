"""Self-describing checkpoint files.

Layout: a magic line, one line of JSON (format version, model config,
vocabulary, free-form metadata and a tensor table with name, dtype,
shape, byte offset and size), then the raw little-endian tensor bytes.
Writing the same model twice yields identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from ..io import atomic_write_bytes
from .network import FusionModel, ModelConfig
from .vocab import Vocab

MAGIC = b"LITREVIEW-CKPT\n"
FORMAT_VERSION = 1


def save_checkpoint(path, model: FusionModel, vocab: Vocab, meta: dict | None = None) -> None:
    tensors, blobs, offset = [], [], 0
    for name, t in model.state_dict().items():
        arr = t.detach().cpu().numpy()
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        data = np.ascontiguousarray(arr).tobytes()
        tensors.append({"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "vocab": list(vocab.itos),
        "meta": meta or {},
        "tensors": tensors,
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
    atomic_write_bytes(path, MAGIC + line + b"".join(blobs))


def load_checkpoint(path) -> tuple[FusionModel, Vocab, dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    end = raw.index(b"\n", len(MAGIC))
    header = json.loads(raw[len(MAGIC):end])
    if header.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    body = raw[end + 1:]
    cfg = ModelConfig(**header["config"])
    model = FusionModel(cfg)
    state = {}
    for t in header["tensors"]:
        chunk = body[t["offset"]: t["offset"] + t["nbytes"]]
        arr = np.frombuffer(chunk, dtype=np.dtype(t["dtype"]).newbyteorder("<")).reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    dtype = next(iter(state.values())).dtype
    model = model.to(dtype)
    model.load_state_dict(state)
    return model, Vocab(tuple(header["vocab"])), header["meta"]
