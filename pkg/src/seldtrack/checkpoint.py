"""Versioned binary checkpoint container.

Layout: 8-byte magic, little-endian uint32 format version, uint64 JSON header
length, the JSON header, then raw little-endian array payloads. The header
records the model config, optimizer param groups, free-form extras, and an
array index (name, dtype, shape, offset). Loading is strict about magic and
version so stale or corrupt files fail loudly instead of half-loading.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .errors import CheckpointError
from .model import ModelConfig, TrackSeldModel

MAGIC = b"SELDTRK\x00"
FORMAT_VERSION = 1
_FIXED = struct.Struct("<8sIQ")


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy()


@dataclass
class Checkpoint:
    config: ModelConfig
    model_state: dict[str, torch.Tensor]
    optimizer_state: dict | None
    extra: dict

    def build_model(self, dtype: torch.dtype = torch.float32) -> TrackSeldModel:
        model = TrackSeldModel(self.config).to(dtype)
        state = {
            k: v.to(dtype) if v.is_floating_point() else v for k, v in self.model_state.items()
        }
        model.load_state_dict(state)
        return model


def save_checkpoint(path, model: TrackSeldModel, optimizer=None, extra: dict | None = None) -> None:
    arrays: list[tuple[str, np.ndarray]] = []
    for name, tensor in model.state_dict().items():
        arrays.append((f"model/{name}", _to_numpy(tensor)))

    optim_groups = None
    if optimizer is not None:
        sd = optimizer.state_dict()
        optim_groups = sd["param_groups"]
        for pid, state in sd["state"].items():
            for key, value in state.items():
                value = value if isinstance(value, torch.Tensor) else torch.tensor(value)
                arrays.append((f"optim/{pid}/{key}", _to_numpy(value)))

    index = []
    offset = 0
    blobs = []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = le.tobytes()
        index.append(
            {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape), "offset": offset}
        )
        blobs.append(blob)
        offset += len(blob)

    header = json.dumps(
        {
            "model_config": model.config.to_dict(),
            "optimizer_param_groups": optim_groups,
            "extra": extra or {},
            "arrays": index,
        },
        sort_keys=True,
    ).encode()

    with open(path, "wb") as fh:
        fh.write(_FIXED.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        fixed = fh.read(_FIXED.size)
        if len(fixed) < _FIXED.size:
            raise CheckpointError(f"{path}: truncated checkpoint header")
        magic, version, header_len = _FIXED.unpack(fixed)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a seldtrack checkpoint")
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )
        try:
            header = json.loads(fh.read(header_len).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupted header ({exc})") from exc
        payload = fh.read()

    tensors: dict[str, torch.Tensor] = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"]).newbyteorder("<")
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=start)
        if arr.size != count:
            raise CheckpointError(f"{path}: truncated payload for array {entry['name']}")
        tensors[entry["name"]] = torch.from_numpy(
            arr.reshape(entry["shape"]).astype(np.dtype(entry["dtype"]), copy=True)
        )

    config = ModelConfig(**header["model_config"])
    model_state = {
        name[len("model/"):]: t for name, t in tensors.items() if name.startswith("model/")
    }

    optimizer_state = None
    if header.get("optimizer_param_groups") is not None:
        state: dict[int, dict] = {}
        for name, t in tensors.items():
            if not name.startswith("optim/"):
                continue
            _, pid, key = name.split("/", 2)
            state.setdefault(int(pid), {})[key] = t
        optimizer_state = {"state": state, "param_groups": header["optimizer_param_groups"]}

    return Checkpoint(config, model_state, optimizer_state, header.get("extra", {}))
