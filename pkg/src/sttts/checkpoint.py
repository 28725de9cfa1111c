"""Single-file checkpoint container.

Layout::

    b"STTTS1" | uint32 LE manifest length | UTF-8 JSON manifest | raw tensor payload

The manifest lists every tensor as ``{name, shape, dtype, offset, nbytes}`` (offsets are
relative to the payload start) and carries the step counter, the config snapshot and
metadata needed to rebuild the tag provider and vocabulary. Payloads are little-endian.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .config import ModelConfig

MAGIC = b"STTTS1"
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    step: int = 0
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def model_state(self) -> dict[str, torch.Tensor]:
        return {k[len("model."):]: torch.from_numpy(v.copy()) for k, v in self.tensors.items()
                if k.startswith("model.")}

    def optimizer_state(self) -> dict[str, dict[str, torch.Tensor]]:
        state: dict[str, dict[str, torch.Tensor]] = {}
        for k, v in self.tensors.items():
            if k.startswith("optim."):
                pname, slot = k[len("optim."):].rsplit(".", 1)
                state.setdefault(pname, {})[slot] = torch.from_numpy(v.copy())
        return state


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().contiguous().numpy().copy()


def from_training(model, optimizer, step: int, meta: dict[str, Any]) -> Checkpoint:
    tensors = {f"model.{k}": _to_numpy(v) for k, v in model.state_dict().items()}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for p, slots in optimizer.state.items():
            for slot in sorted(slots):
                value = slots[slot]
                if not torch.is_tensor(value):
                    value = torch.tensor(float(value))
                tensors[f"optim.{names[id(p)]}.{slot}"] = _to_numpy(value)
    tensors = dict(sorted(tensors.items()))
    return Checkpoint(config=model.config, step=step, tensors=tensors, meta=meta)


def restore_optimizer(optimizer, model, ckpt: Checkpoint) -> None:
    params = dict(model.named_parameters())
    for name, slots in ckpt.optimizer_state().items():
        p = params[name]
        optimizer.state[p] = {k: v.to(p.dtype) if k != "step" else v for k, v in slots.items()}


def to_bytes(ckpt: Checkpoint) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for {name}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype,
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "version": MAGIC.decode(),
        "step": int(ckpt.step),
        "config": ckpt.config.to_dict(),
        "meta": ckpt.meta,
        "tensors": entries,
    }
    head = json.dumps(manifest, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + b"".join(chunks)


def from_bytes(data: bytes) -> Checkpoint:
    if data[:6] != MAGIC:
        raise CheckpointError("not an STTTS1 checkpoint")
    (n,) = struct.unpack("<I", data[6:10])
    try:
        manifest = json.loads(data[10:10 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from exc
    payload = memoryview(data)[10 + n:]
    tensors = {}
    for e in manifest["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"tensor {e['name']} extends past end of file")
        arr = np.frombuffer(payload[e["offset"]:end], dtype=_DTYPES[e["dtype"]])
        tensors[e["name"]] = arr.astype(e["dtype"]).reshape(e["shape"])
    return Checkpoint(config=ModelConfig.from_dict(manifest["config"]), step=manifest["step"],
                      tensors=tensors, meta=manifest["meta"])


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
