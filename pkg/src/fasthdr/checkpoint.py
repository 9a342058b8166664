"""Binary checkpoint: ``FHDR`` magic, u32 version, u32-length-prefixed JSON manifest, raw float32 LE data."""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, Pipeline

MAGIC = b"FHDR"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    model_config: ModelConfig
    tensors: Dict[str, np.ndarray]
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict[str, object] = field(default_factory=dict)

    @property
    def param_count(self) -> int:
        return int(self.meta.get("param_count", 0))

    def build(self) -> Pipeline:
        model = Pipeline(self.model_config)
        try:
            model.load_state_dict(self.tensors)
        except (KeyError, ValueError) as e:
            raise CheckpointError(f"checkpoint does not match its configuration: {e}") from None
        return model


def from_model(model: Pipeline, optimizer: Optional[Dict[str, np.ndarray]] = None, **meta) -> Checkpoint:
    meta = dict(meta)
    meta["param_count"] = model.num_parameters()
    return Checkpoint(model.cfg, {k: np.array(v, np.float32) for k, v in model.state_dict().items()},
                      dict(optimizer or {}), meta)


def save(ckpt: Checkpoint, path) -> None:
    """Write atomically (temporary file, then rename)."""
    entries = []
    blobs = []
    offset = 0
    for group, tensors in (("model", ckpt.tensors), ("optimizer", ckpt.optimizer)):
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=_F32)
            entries.append({"group": group, "name": name, "shape": list(arr.shape),
                            "offset": offset, "count": int(arr.size)})
            blobs.append(arr.tobytes())
            offset += arr.size
    manifest = json.dumps({"model_config": ckpt.model_config.to_dict(), "meta": ckpt.meta,
                           "tensors": entries}, sort_keys=True).encode("utf-8")
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(manifest)))
        f.write(manifest)
        for b in blobs:
            f.write(b)
    os.replace(tmp, path)


def load(path) -> Checkpoint:
    path = os.fspath(path)
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"{path}: {e.strerror}") from None
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    start = _HEADER.size + mlen
    if len(raw) < start:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[_HEADER.size:start].decode("utf-8"))
        cfg = ModelConfig.from_dict(manifest["model_config"])
        entries = manifest["tensors"]
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: corrupt manifest ({e})") from None
    total = sum(int(e["count"]) for e in entries)
    if len(raw) - start != total * _F32.itemsize:
        raise CheckpointError(f"{path}: corrupt data section: expected {total * _F32.itemsize} bytes, "
                              f"found {len(raw) - start}")
    data = np.frombuffer(raw, dtype=_F32, offset=start)
    groups: Dict[str, Dict[str, np.ndarray]] = {"model": {}, "optimizer": {}}
    for e in entries:
        shape = tuple(int(s) for s in e["shape"])
        count, off = int(e["count"]), int(e["offset"])
        if int(np.prod(shape)) != count or off + count > total:
            raise CheckpointError(f"{path}: inconsistent entry for {e['name']}")
        if e["group"] not in groups:
            raise CheckpointError(f"{path}: unknown tensor group {e['group']!r}")
        groups[e["group"]][e["name"]] = data[off:off + count].reshape(shape).astype(np.float32)
    ckpt = Checkpoint(cfg, groups["model"], groups["optimizer"], manifest.get("meta", {}))
    # shape validation against the configuration happens here, not at first use
    model = ckpt.build()
    if ckpt.param_count and ckpt.param_count != model.num_parameters():
        raise CheckpointError(f"{path}: manifest records {ckpt.param_count} parameters, "
                              f"configuration implies {model.num_parameters()}")
    return ckpt


def load_model(path) -> Pipeline:
    model = load(path).build()
    model.eval()
    return model
