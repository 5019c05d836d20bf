"""Self-describing binary checkpoint container for trained denoisers.

Layout: 8-byte magic, uint32 version, uint32 header length, UTF-8 JSON
header (architecture, sigma_data, training-schedule endpoints, metadata,
tensor directory), then the raw tensor payload as little-endian float32 in
directory order. Everything needed to rebuild the model is in the header.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from dpsep.priors.network import PARAM_NAMES, DenoiserArch, TrainableDenoiser
from dpsep.priors.training import Adam

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError", "MAGIC", "VERSION"]

MAGIC = b"DNZCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def save_checkpoint(
    path,
    model: TrainableDenoiser,
    role: str,
    schedule_meta: dict,
    training_meta: dict | None = None,
    optimizer: Adam | None = None,
) -> None:
    tensors = [(name, model.params[name]) for name in PARAM_NAMES]
    opt_meta = None
    if optimizer is not None and optimizer.t > 0:
        opt_meta = {
            "t": optimizer.t,
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
        }
        for name in PARAM_NAMES:
            tensors.append((f"adam.m.{name}", optimizer.m[name]))
            tensors.append((f"adam.v.{name}", optimizer.v[name]))
    header = {
        "version": VERSION,
        "role": role,
        "arch": {
            "signal_len": model.arch.signal_len,
            "frame_len": model.arch.frame_len,
            "hidden": model.arch.hidden,
            "emb_dim": model.arch.emb_dim,
            "cond_dim": model.arch.cond_dim,
        },
        "sigma_data": model.sigma_data,
        "schedule": dict(schedule_meta),
        "training": dict(training_meta or {}),
        "tensors": [
            {"name": name, "shape": list(arr.shape)} for name, arr in tensors
        ],
    }
    if opt_meta is not None:
        header["optimizer"] = opt_meta
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        for _, arr in tensors:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (model, header dict, optimizer or None)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a denoiser checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version} (expected {VERSION})"
        )
    if len(raw) < 16 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if len(raw) < offset + nbytes:
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    missing = [n for n in PARAM_NAMES if n not in tensors]
    if missing:
        raise CheckpointError(f"{path}: missing parameter tensors {missing}")
    arch = DenoiserArch(**header["arch"])
    model = TrainableDenoiser(
        arch,
        sigma_data=float(header["sigma_data"]),
        params={n: tensors[n] for n in PARAM_NAMES},
    )
    optimizer = None
    if "optimizer" in header:
        om = header["optimizer"]
        optimizer = Adam(
            lr=float(om["lr"]),
            beta1=float(om["beta1"]),
            beta2=float(om["beta2"]),
            eps=float(om["eps"]),
            t=int(om["t"]),
            m={n: tensors[f"adam.m.{n}"] for n in PARAM_NAMES},
            v={n: tensors[f"adam.v.{n}"] for n in PARAM_NAMES},
        )
    return model, header, optimizer
