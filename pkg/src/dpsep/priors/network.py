"""Trainable time-frame denoiser with hand-written reverse-mode gradients.

Architecture: the (preconditioned) input signal is cut into 50%-overlapping
frames, each frame is processed by a shared 3-layer tanh MLP that also sees
a Fourier embedding of the noise level and an optional conditioning vector
plus presence flag, and the frame outputs are overlap-added under a periodic
Hann window (which sums to exactly 1 at 50% overlap). The result enters the
standard c_skip/c_out/c_in preconditioning:

    D(x, sigma) = c_skip(sigma) * x + c_out(sigma) * F(c_in(sigma) * x, ...)

    c_skip = sd^2/(sigma^2+sd^2), c_out = sigma*sd/sqrt(sigma^2+sd^2),
    c_in = 1/sqrt(sigma^2+sd^2), with sd the corpus std.

Both the parameter gradients (for training) and the input vjp (for posterior
guidance) are exact reverse-mode passes written out by hand; no autodiff
framework is involved, which keeps the vjp a checkable contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dpsep.priors.base import ScoreModel, cond_array

__all__ = ["DenoiserArch", "TrainableDenoiser", "PARAM_NAMES"]

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")

_MAX_PARAMS = 200_000


@dataclass(frozen=True)
class DenoiserArch:
    """Shape hyperparameters of the frame MLP."""

    signal_len: int
    frame_len: int = 64
    hidden: int = 128
    emb_dim: int = 16
    cond_dim: int = 8

    def __post_init__(self):
        if self.signal_len < self.frame_len:
            raise ValueError(
                f"signal_len {self.signal_len} shorter than frame_len {self.frame_len}"
            )
        if self.frame_len < 4 or self.frame_len % 2:
            raise ValueError(f"frame_len must be even and >= 4, got {self.frame_len}")
        if self.emb_dim < 2 or self.emb_dim % 2:
            raise ValueError(f"emb_dim must be even and >= 2, got {self.emb_dim}")
        if self.hidden < 1:
            raise ValueError(f"hidden must be >= 1, got {self.hidden}")
        if self.cond_dim < 0:
            raise ValueError(f"cond_dim must be >= 0, got {self.cond_dim}")
        if self.n_params > _MAX_PARAMS:
            raise ValueError(
                f"architecture has {self.n_params} parameters, cap is {_MAX_PARAMS}"
            )

    @property
    def frame_hop(self) -> int:
        return self.frame_len // 2

    @property
    def n_in(self) -> int:
        return self.frame_len + self.emb_dim + self.cond_dim + 1

    @property
    def n_frames(self) -> int:
        return -(-self.signal_len // self.frame_hop) + 1

    @property
    def n_params(self) -> int:
        w = self.frame_len
        h = self.hidden
        return (self.n_in * h + h) + (h * h + h) + (h * w + w)


class TrainableDenoiser(ScoreModel):
    """ScoreModel backed by the frame MLP above."""

    def __init__(
        self,
        arch: DenoiserArch,
        sigma_data: float,
        rng: np.random.Generator | int | None = None,
        params: dict | None = None,
    ):
        if not sigma_data > 0:
            raise ValueError(f"sigma_data must be > 0, got {sigma_data}")
        self.arch = arch
        self.sigma_data = float(sigma_data)
        self.dim = arch.signal_len
        h = arch.frame_hop
        starts = np.arange(arch.n_frames) * h
        self._idx = starts[:, None] + np.arange(arch.frame_len)[None, :]
        self._padded_len = (arch.n_frames + 1) * h
        # periodic Hann: consecutive 50%-overlapping copies sum to exactly 1
        n = np.arange(arch.frame_len)
        self._win = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / arch.frame_len)
        self._freqs = 0.25 * 2.0 ** np.arange(arch.emb_dim // 2)
        if params is not None:
            self.params = {k: np.asarray(params[k], dtype=np.float64) for k in PARAM_NAMES}
            self._check_param_shapes()
        else:
            self.params = self._init_params(rng)

    def _param_shapes(self):
        a = self.arch
        return {
            "w1": (a.n_in, a.hidden),
            "b1": (a.hidden,),
            "w2": (a.hidden, a.hidden),
            "b2": (a.hidden,),
            "w3": (a.hidden, a.frame_len),
            "b3": (a.frame_len,),
        }

    def _check_param_shapes(self):
        for k, shape in self._param_shapes().items():
            if self.params[k].shape != shape:
                raise ValueError(
                    f"parameter {k} has shape {self.params[k].shape}, expected {shape}"
                )

    def _init_params(self, rng) -> dict:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        a = self.arch
        w1 = rng.normal(0.0, 1.0 / np.sqrt(a.n_in), size=(a.n_in, a.hidden))
        # conditioning and presence-flag rows start at zero: a model that
        # never sees conditioning during training keeps them at zero, making
        # its conditional and unconditional branches exactly identical
        w1[a.frame_len + a.emb_dim :, :] = 0.0
        w2 = rng.normal(0.0, 1.0 / np.sqrt(a.hidden), size=(a.hidden, a.hidden))
        # zero-initialized output layer: the network starts as F = 0, so the
        # initial denoiser is the pure c_skip shrinkage
        return {
            "w1": w1,
            "b1": np.zeros(a.hidden),
            "w2": w2,
            "b2": np.zeros(a.hidden),
            "w3": np.zeros((a.hidden, a.frame_len)),
            "b3": np.zeros(a.frame_len),
        }

    # ---- preconditioning and feature building ----

    def _precond(self, sigma: float):
        sd = self.sigma_data
        s2 = sigma * sigma + sd * sd
        return sd * sd / s2, sigma * sd / np.sqrt(s2), 1.0 / np.sqrt(s2)

    def _embed(self, sigma: float) -> np.ndarray:
        t = np.log(sigma) / 4.0
        ang = self._freqs * t
        return np.concatenate([np.sin(ang), np.cos(ang)])

    def _cond_features(self, cond) -> np.ndarray:
        a = self.arch
        feat = np.zeros(a.cond_dim + 1)
        c = cond_array(cond)
        if c is not None:
            if c.shape != (a.cond_dim,):
                raise ValueError(
                    f"conditioning has shape {c.shape}, model expects ({a.cond_dim},)"
                )
            feat[:-1] = c
            feat[-1] = 1.0
        return feat

    def _rows(self, xin: np.ndarray, sigma: float, cond) -> np.ndarray:
        a = self.arch
        xp = np.zeros(self._padded_len)
        xp[a.frame_hop : a.frame_hop + a.signal_len] = xin
        rows = np.empty((a.n_frames, a.n_in))
        rows[:, : a.frame_len] = xp[self._idx]
        rows[:, a.frame_len : a.frame_len + a.emb_dim] = self._embed(sigma)
        rows[:, a.frame_len + a.emb_dim :] = self._cond_features(cond)
        return rows

    # ---- frame overlap-add and its adjoint ----

    def _ola(self, y: np.ndarray) -> np.ndarray:
        """Windowed overlap-add of frame outputs, cropped to the signal span."""
        a = self.arch
        w = a.frame_len
        buf = np.zeros(self._padded_len)
        fy = y * self._win[None, :]
        even = fy[0::2]
        odd = fy[1::2]
        buf[: even.shape[0] * w].reshape(-1, w)[:] += even
        buf[a.frame_hop : a.frame_hop + odd.shape[0] * w].reshape(-1, w)[:] += odd
        return buf[a.frame_hop : a.frame_hop + a.signal_len]

    def _ola_adjoint(self, v: np.ndarray) -> np.ndarray:
        a = self.arch
        vp = np.zeros(self._padded_len)
        vp[a.frame_hop : a.frame_hop + a.signal_len] = v
        return vp[self._idx] * self._win[None, :]

    def _frames_adjoint(self, dframes: np.ndarray) -> np.ndarray:
        a = self.arch
        w = a.frame_len
        buf = np.zeros(self._padded_len)
        even = dframes[0::2]
        odd = dframes[1::2]
        buf[: even.shape[0] * w].reshape(-1, w)[:] += even
        buf[a.frame_hop : a.frame_hop + odd.shape[0] * w].reshape(-1, w)[:] += odd
        return buf[a.frame_hop : a.frame_hop + a.signal_len]

    # ---- MLP core ----

    def _mlp(self, rows: np.ndarray):
        p = self.params
        z1 = rows @ p["w1"] + p["b1"]
        a1 = np.tanh(z1)
        t2 = np.tanh(a1 @ p["w2"] + p["b2"])
        a2 = t2 + a1
        y = a2 @ p["w3"] + p["b3"]
        return y, (rows, a1, t2, a2)

    def _mlp_backward(self, cache, dy: np.ndarray, want_param_grads: bool):
        """Reverse pass; returns (d rows, param grads or None)."""
        rows, a1, t2, a2 = cache
        p = self.params
        da2 = dy @ p["w3"].T
        dz2 = da2 * (1.0 - t2 * t2)
        da1 = dz2 @ p["w2"].T + da2
        dz1 = da1 * (1.0 - a1 * a1)
        drows = dz1 @ p["w1"].T
        if not want_param_grads:
            return drows, None
        grads = {
            "w3": a2.T @ dy,
            "b3": dy.sum(axis=0),
            "w2": a1.T @ dz2,
            "b2": dz2.sum(axis=0),
            "w1": rows.T @ dz1,
            "b1": dz1.sum(axis=0),
        }
        return drows, grads

    # ---- ScoreModel interface ----

    def denoise(self, x_tau, sigma, cond=None):
        x_tau = self._check(x_tau, sigma)
        sigma = float(sigma)
        c_skip, c_out, c_in = self._precond(sigma)
        rows = self._rows(c_in * x_tau, sigma, cond)
        y, _ = self._mlp(rows)
        return c_skip * x_tau + c_out * self._ola(y)

    def vjp(self, x_tau, sigma, cond, v):
        x_tau = self._check(x_tau, sigma)
        v = np.asarray(v, dtype=np.float64)
        sigma = float(sigma)
        c_skip, c_out, c_in = self._precond(sigma)
        rows = self._rows(c_in * x_tau, sigma, cond)
        _, cache = self._mlp(rows)
        dy = self._ola_adjoint(c_out * v)
        drows, _ = self._mlp_backward(cache, dy, want_param_grads=False)
        dxin = self._frames_adjoint(drows[:, : self.arch.frame_len])
        return c_skip * v + c_in * dxin

    # ---- training support ----

    def loss_and_param_grads(self, x, noisy, sigmas, conds):
        """One batch of the denoising objective with parameter gradients.

        x, noisy: (B, d) clean signals and their corrupted versions
        sigmas: (B,) noise levels; conds: length-B list (entries None for the
        unconditional branch).

        The optimized objective is the preconditioned residual
        mean_b ||F_b - target_b||^2 / d with target = (x - c_skip*noisy)/c_out,
        which weights the plain denoising loss by 1/c_out^2 and keeps
        gradient scale uniform across sigma. Returns
        (plain_loss, weighted_loss, grads) where plain_loss is the
        batch-mean of ||D(noisy) - x||^2.
        """
        a = self.arch
        B = x.shape[0]
        nf = a.n_frames
        rows = np.empty((B * nf, a.n_in))
        pre = [self._precond(float(s)) for s in sigmas]
        for b in range(B):
            rows[b * nf : (b + 1) * nf] = self._rows(
                pre[b][2] * noisy[b], float(sigmas[b]), conds[b]
            )
        y, cache = self._mlp(rows)
        dy = np.empty_like(y)
        plain = 0.0
        weighted = 0.0
        scale = 2.0 / (B * a.signal_len)
        for b in range(B):
            c_skip, c_out, _ = pre[b]
            fb = self._ola(y[b * nf : (b + 1) * nf])
            resid = fb - (x[b] - c_skip * noisy[b]) / c_out
            sq = float(resid @ resid)
            weighted += sq / (B * a.signal_len)
            plain += c_out * c_out * sq / B
            dy[b * nf : (b + 1) * nf] = self._ola_adjoint(scale * resid)
        _, grads = self._mlp_backward(cache, dy, want_param_grads=True)
        return plain, weighted, grads
