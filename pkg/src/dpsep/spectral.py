"""Short-time Fourier analysis and the compressed-spectrogram mixture loss.

Conventions
-----------
* Frames are centered: the signal is reflection-padded by window_len // 2 on
  both sides and frame t covers padded samples [t * hop, t * hop + window_len).
  The frame count is ceil(d / hop), so 4 s at 16 kHz with hop 160 gives
  exactly 400 frames.
* The forward transform is an unnormalized windowed rFFT (no 1/N factor).
* The inverse is the least-squares inverse: windowed overlap-add divided by
  the window sum-square. For an unmodified spectrogram the round trip is
  exact to float precision wherever the window mass is nonzero.
* Spectrograms are complex arrays of shape (n_frames, n_bins) with
  n_bins = window_len // 2 + 1.
* ``stft_adjoint`` is the exact adjoint of ``stft`` under the real inner
  product <U, V> = sum(Re U * Re V + Im U * Im V), which is what gradient
  chains through the spectrogram need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal.windows import hann

__all__ = [
    "StftConfig",
    "stft",
    "istft",
    "stft_adjoint",
    "n_frames",
    "compress",
    "rec_loss",
    "rec_loss_grad",
    "rec_loss_and_grad",
]

_TINY_WINDOW_MASS = 1e-10


@dataclass(frozen=True)
class StftConfig:
    """Spectrogram geometry: window length, hop, derived bin count."""

    window_len: int = 510
    hop: int = 160
    mag_floor: float = 1e-8

    def __post_init__(self):
        if self.window_len < 2:
            raise ValueError(f"window_len must be >= 2, got {self.window_len}")
        if not 0 < self.hop <= self.window_len:
            raise ValueError(
                f"hop must be in (0, window_len], got hop={self.hop}, "
                f"window_len={self.window_len}"
            )
        if self.mag_floor <= 0:
            raise ValueError(f"mag_floor must be > 0, got {self.mag_floor}")

    @property
    def n_bins(self) -> int:
        return self.window_len // 2 + 1

    @property
    def pad(self) -> int:
        return self.window_len // 2

    def window(self) -> np.ndarray:
        # symmetric Hann: w[i] == w[window_len - 1 - i], values in [0, 1]
        return hann(self.window_len, sym=True)


def n_frames(d: int, cfg: StftConfig) -> int:
    """Number of frames covering a length-d signal: ceil(d / hop)."""
    if d <= 0:
        raise ValueError(f"signal length must be > 0, got {d}")
    return -(-d // cfg.hop)


def _check_length(d: int, cfg: StftConfig) -> None:
    if d < cfg.pad + 1:
        raise ValueError(
            f"signal length {d} too short for centered framing with "
            f"window_len {cfg.window_len} (need at least {cfg.pad + 1})"
        )


def _frame_starts(d: int, cfg: StftConfig) -> np.ndarray:
    return np.arange(n_frames(d, cfg)) * cfg.hop


def stft(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Centered windowed rFFT of a real signal, shape (n_frames, n_bins)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D signal, got shape {x.shape}")
    d = x.shape[0]
    _check_length(d, cfg)
    padded = np.pad(x, cfg.pad, mode="reflect")
    starts = _frame_starts(d, cfg)
    idx = starts[:, None] + np.arange(cfg.window_len)[None, :]
    frames = padded[idx] * cfg.window()[None, :]
    return np.fft.rfft(frames, n=cfg.window_len, axis=1)


def istft(spec: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    """Least-squares inverse: windowed overlap-add over window sum-square."""
    spec = np.asarray(spec)
    T = n_frames(length, cfg)
    if spec.shape != (T, cfg.n_bins):
        raise ValueError(
            f"spectrogram shape {spec.shape} does not match length {length} "
            f"(expected ({T}, {cfg.n_bins}))"
        )
    _check_length(length, cfg)
    win = cfg.window()
    frames = np.fft.irfft(spec, n=cfg.window_len, axis=1) * win[None, :]
    buf = np.zeros(length + 2 * cfg.pad)
    wss = np.zeros(length + 2 * cfg.pad)
    starts = _frame_starts(length, cfg)
    win_sq = win * win
    for t, s in enumerate(starts):
        buf[s : s + cfg.window_len] += frames[t]
        wss[s : s + cfg.window_len] += win_sq
    out = buf[cfg.pad : cfg.pad + length]
    mass = wss[cfg.pad : cfg.pad + length]
    nz = mass > _TINY_WINDOW_MASS
    out[nz] /= mass[nz]
    return out


def stft_adjoint(spec: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    """Exact adjoint of ``stft`` as a real-linear map.

    Satisfies <stft(x), V>_R == <x, stft_adjoint(V)> for every real x of the
    given length, where <U, V>_R = Re(sum(U * conj(V))).
    """
    spec = np.asarray(spec, dtype=np.complex128)
    T = n_frames(length, cfg)
    if spec.shape != (T, cfg.n_bins):
        raise ValueError(
            f"spectrogram shape {spec.shape} does not match length {length} "
            f"(expected ({T}, {cfg.n_bins}))"
        )
    _check_length(length, cfg)
    L = cfg.window_len
    # adjoint of the per-frame rFFT under the real inner product:
    # g[n] = Re(sum_f V[f] * exp(2j pi f n / L)), no Hermitian doubling
    full = np.zeros((T, L), dtype=np.complex128)
    full[:, : cfg.n_bins] = spec
    g = np.real(np.fft.ifft(full, n=L, axis=1)) * L
    g *= cfg.window()[None, :]
    buf = np.zeros(length + 2 * cfg.pad)
    starts = _frame_starts(length, cfg)
    for t, s in enumerate(starts):
        buf[s : s + L] += g[t]
    # adjoint of the reflection padding: fold the pad regions back in
    P = cfg.pad
    out = buf[P : P + length].copy()
    out[1 : P + 1] += buf[:P][::-1]
    right = buf[P + length :]
    out[length - 1 - right.shape[0] : length - 1] += right[::-1]
    return out


def compress(spec: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Power-law magnitude compression |Z|^(2/3) * exp(j angle(Z)).

    Computed as Z * max(|Z|, mag_floor)^(-1/3), which is phase-exact and
    linear (hence smooth) below the magnitude floor.
    """
    spec = np.asarray(spec, dtype=np.complex128)
    mag = np.maximum(np.abs(spec), cfg.mag_floor)
    return spec * mag ** (-1.0 / 3.0)


def _sum_estimates(estimates) -> np.ndarray:
    arrs = [np.asarray(e, dtype=np.float64) for e in estimates]
    if not arrs:
        raise ValueError("need at least one estimate")
    d = arrs[0].shape
    for a in arrs:
        if a.shape != d:
            raise ValueError(
                f"estimate shapes differ: {a.shape} vs {d}; all signals must "
                "share one length"
            )
    return np.sum(arrs, axis=0)


def rec_loss(
    y: np.ndarray,
    estimates,
    cfg: StftConfig,
    y_compressed: np.ndarray | None = None,
) -> float:
    """Squared L2 mismatch between compressed spectrograms of y and sum(estimates).

    ``y_compressed`` lets callers reuse compress(stft(y)) across many calls.
    """
    loss, _ = _loss_and_spec_grad(y, estimates, cfg, y_compressed, want_grad=False)
    return loss


def rec_loss_grad(
    y: np.ndarray,
    estimates,
    cfg: StftConfig,
    y_compressed: np.ndarray | None = None,
) -> np.ndarray:
    """Exact gradient of ``rec_loss`` with respect to the summed estimate.

    The loss depends on the estimates only through their sum, so this one
    vector is the gradient with respect to each individual estimate as well.
    """
    _, grad = _loss_and_spec_grad(y, estimates, cfg, y_compressed, want_grad=True)
    return grad


def rec_loss_and_grad(
    y: np.ndarray,
    estimates,
    cfg: StftConfig,
    y_compressed: np.ndarray | None = None,
):
    """Loss and gradient from a single pass; see rec_loss / rec_loss_grad."""
    return _loss_and_spec_grad(y, estimates, cfg, y_compressed, want_grad=True)


def _loss_and_spec_grad(y, estimates, cfg, y_compressed, want_grad):
    total = _sum_estimates(estimates)
    if y_compressed is None:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != total.shape:
            raise ValueError(
                f"mixture shape {y.shape} does not match estimate shape {total.shape}"
            )
        y_compressed = compress(stft(y, cfg), cfg)
    Z = stft(total, cfg)
    if y_compressed.shape != Z.shape:
        raise ValueError(
            f"compressed reference shape {y_compressed.shape} does not match "
            f"estimate spectrogram shape {Z.shape}"
        )
    mag = np.abs(Z)
    safe = np.maximum(mag, cfg.mag_floor)
    g = safe ** (-1.0 / 3.0)
    R = y_compressed - Z * g
    loss = float(np.sum(R.real**2 + R.imag**2))
    if not want_grad:
        return loss, None
    # d/dZ of |S(y) - C(Z)|^2 summed, as a complex cotangent G with
    # dL = Re(conj(G) dZ); C(Z) = Z * g(|Z|), g(r) = max(r, floor)^(-1/3)
    # G = -2 [ g R + (g'(r)/r) Re(conj(R) Z) Z ],  g'(r) = -(1/3) r^(-4/3)
    gp_over_r = np.where(
        mag > cfg.mag_floor, -(1.0 / 3.0) * safe ** (-4.0 / 3.0) / safe, 0.0
    )
    G = -2.0 * (g * R + gp_over_r * np.real(np.conj(R) * Z) * Z)
    return loss, stft_adjoint(G, cfg, total.shape[0])
