"""WAV and manifest persistence.

Files are 16-bit PCM mono. Float signals are peak-normalized before
quantization and the scale factor is recorded in the manifest, so the float
pipeline is recoverable up to quantization; all metrics run on the float
values, files are only the interchange format.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.io import wavfile

__all__ = ["write_wav", "read_wav", "write_manifest", "read_manifest"]

_PCM_FULL_SCALE = 32767.0


def write_wav(path, x: np.ndarray, sample_rate: int) -> float:
    """Write a peak-normalized 16-bit PCM file; returns the peak scale.

    The float signal is x ≈ scale * pcm / 32767. A zero signal gets scale 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected mono 1-D signal, got shape {x.shape}")
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    scale = peak if peak > 0.0 else 1.0
    pcm = np.round(x / scale * _PCM_FULL_SCALE).astype(np.int16)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, sample_rate, pcm)
    return scale


def read_wav(path, scale: float = 1.0):
    """Read a 16-bit PCM file back to float; returns (signal, sample_rate)."""
    sample_rate, pcm = wavfile.read(Path(path))
    if pcm.dtype != np.int16:
        raise ValueError(f"{path}: expected 16-bit PCM, got dtype {pcm.dtype}")
    if pcm.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got shape {pcm.shape}")
    return pcm.astype(np.float64) * (scale / _PCM_FULL_SCALE), int(sample_rate)


def write_manifest(path, payload: dict) -> None:
    """Deterministic JSON manifest (sorted keys, no timestamps)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(path) -> dict:
    with open(Path(path), encoding="utf-8") as f:
        return json.load(f)
