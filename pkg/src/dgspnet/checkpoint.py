"""Binary checkpoint format.

Layout: the magic ``b"DGSP1\\n"``, an 8-byte little-endian manifest length,
a UTF-8 JSON manifest, then contiguous little-endian float32 blobs. The
manifest is a list of ``{name, dtype: "f32", shape, offset, nbytes}`` entries
(offsets relative to the first blob). Its first entry is named ``__meta__``
with ``nbytes = 0`` and carries the config snapshot, phase tag and step.
Integer buffers are stored as f32 and cast back on load (``orig_dtype``).
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn as nn

from .errors import CheckpointError, CorruptCheckpointError

MAGIC = b"DGSP1\n"
META = "__meta__"


@dataclass
class Checkpoint:
    tensors: dict[str, torch.Tensor]
    config: dict[str, Any] = field(default_factory=dict)
    phase: str = "train"
    step: int = 0
    extra: dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    entries: list[dict[str, Any]] = [{
        "name": META, "dtype": "f32", "shape": [], "offset": 0, "nbytes": 0,
        "config": ckpt.config, "phase": ckpt.phase, "step": ckpt.step, "extra": ckpt.extra,
    }]
    blobs = []
    offset = 0
    for name, t in ckpt.tensors.items():
        arr = t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
        data = arr.tobytes()
        entry = {"name": name, "dtype": "f32", "shape": list(t.shape),
                 "offset": offset, "nbytes": len(data)}
        if t.dtype != torch.float32:
            entry["orig_dtype"] = str(t.dtype).replace("torch.", "")
        entries.append(entry)
        blobs.append(data)
        offset += len(data)
    manifest = json.dumps(entries).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for data in blobs:
            fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic or unsupported version")
    head = len(MAGIC) + 8
    if len(raw) < head:
        raise CorruptCheckpointError(f"{path}: truncated header")
    (mlen,) = struct.unpack("<Q", raw[len(MAGIC):head])
    if len(raw) < head + mlen:
        raise CorruptCheckpointError(f"{path}: truncated manifest")
    try:
        entries = json.loads(raw[head:head + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable manifest: {exc}") from exc
    body = memoryview(raw)[head + mlen:]
    expected = sum(e["nbytes"] for e in entries)
    if expected != len(body):
        raise CorruptCheckpointError(
            f"{path}: manifest describes {expected} blob bytes, file holds {len(body)}")
    meta: dict[str, Any] = {}
    tensors: dict[str, torch.Tensor] = {}
    for e in entries:
        if e["name"] == META:
            meta = e
            continue
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        if e["dtype"] != "f32" or e["nbytes"] != 4 * count:
            raise CorruptCheckpointError(f"{path}: entry {e['name']!r} has inconsistent size")
        if e["offset"] + e["nbytes"] > len(body):
            raise CorruptCheckpointError(f"{path}: entry {e['name']!r} runs past end of file")
        arr = np.frombuffer(body[e["offset"]:e["offset"] + e["nbytes"]], dtype="<f4")
        t = torch.from_numpy(arr.reshape(e["shape"]).astype(np.float32))
        if "orig_dtype" in e:
            t = t.to(getattr(torch, e["orig_dtype"]))
        tensors[e["name"]] = t
    return Checkpoint(tensors, meta.get("config", {}), meta.get("phase", "train"),
                      int(meta.get("step", 0)), meta.get("extra", {}))


def model_tensors(model: nn.Module, prefix: str = "model.") -> dict[str, torch.Tensor]:
    return {prefix + k: v for k, v in model.state_dict().items()}


def optimizer_tensors(opt: torch.optim.Optimizer, model: nn.Module,
                      prefix: str = "optim.") -> dict[str, torch.Tensor]:
    names = {id(p): n for n, p in model.named_parameters()}
    out = {}
    for p, state in opt.state.items():
        for key, value in state.items():
            if torch.is_tensor(value):
                out[f"{prefix}{names[id(p)]}.{key}"] = value
    return out


def restore_model(model: nn.Module, tensors: dict[str, torch.Tensor],
                  prefix: str = "model.") -> tuple[list[str], list[str]]:
    """Copy matching entries into ``model``; returns (loaded names, names left at init)."""
    own = model.state_dict()
    loaded = []
    with torch.no_grad():
        for name, target in own.items():
            src = tensors.get(prefix + name)
            if src is None:
                continue
            if tuple(src.shape) != tuple(target.shape):
                raise CheckpointError(
                    f"{name}: checkpoint shape {tuple(src.shape)} != model shape {tuple(target.shape)}")
            target.copy_(src.to(target.dtype))
            loaded.append(name)
    missing = [n for n in own if n not in set(loaded)]
    return loaded, missing


def restore_optimizer(opt: torch.optim.Optimizer, model: nn.Module,
                      tensors: dict[str, torch.Tensor], prefix: str = "optim.") -> None:
    params = dict(model.named_parameters())
    in_opt = {id(p) for g in opt.param_groups for p in g["params"]}
    for key, value in tensors.items():
        if not key.startswith(prefix):
            continue
        pname, state_key = key[len(prefix):].rsplit(".", 1)
        p = params.get(pname)
        if p is None or id(p) not in in_opt:
            continue
        opt.state[p][state_key] = value.clone()
