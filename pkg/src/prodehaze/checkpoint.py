"""Checkpoint files: magic line, 8-byte little-endian header length, JSON header,
then every tensor as little-endian float64 in header order."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"PDHZCKPT1\n"


class CheckpointError(Exception):
    pass


def save_checkpoint(path, module: torch.nn.Module, header: dict) -> None:
    state = module.state_dict()
    tensors, chunks = [], []
    for name, value in state.items():
        arr = value.detach().cpu().numpy().astype("<f8")
        tensors.append({"name": name, "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr).tobytes())
    full = dict(header, tensors=tensors)
    blob = json.dumps(full, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + struct.pack("<Q", len(blob)) + blob + b"".join(chunks))


def load_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint file")
    pos = len(MAGIC)
    (n,) = struct.unpack("<Q", raw[pos : pos + 8])
    header = json.loads(raw[pos + 8 : pos + 8 + n])
    offset = pos + 8 + n
    state = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        state[t["name"]] = torch.as_tensor(data.reshape(t["shape"]).astype(np.float64))
        offset += 8 * count
    if offset != len(raw):
        raise CheckpointError(f"{path}: payload size does not match header")
    return header, state


def load_spr(path):
    from .diffusion import SprModel, make_schedule

    header, state = load_checkpoint(path)
    if header.get("stage") != "spr":
        raise CheckpointError(f"{path} is not an SPR checkpoint")
    model = SprModel(seed=header["seed"], use_prompt=header["use_prompt"], hidden=header["hidden"])
    model.load_state_dict(state)
    s = header["schedule"]
    return model, make_schedule(s["T"], s["beta_min"], s["beta_max"]), header


def load_hcr(path):
    from .refiner import RefinerConfig, RefinerParams

    header, state = load_checkpoint(path)
    if header.get("stage") != "hcr":
        raise CheckpointError(f"{path} is not an HCR checkpoint")
    params = RefinerParams(RefinerConfig.from_dict(header["refiner"]))
    params.load_state_dict(state)
    return params, header
