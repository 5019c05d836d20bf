"""Denoising-objective training loop for the frame denoiser."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dpsep.priors.base import cond_array
from dpsep.priors.network import TrainableDenoiser
from dpsep.schedule import SigmaSchedule, sample_training_sigma

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "Adam",
    "train_denoiser",
    "identity_baseline",
]


class TrainingDiverged(RuntimeError):
    """Raised when the training loss goes non-finite."""


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 16
    lr: float = 1e-4
    cond_dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise ValueError(
                f"cond_dropout must be in [0, 1], got {self.cond_dropout}"
            )


@dataclass
class Adam:
    """Adaptive-moment estimation over a named parameter dict."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (self.m[k] / b1c) / (
                np.sqrt(self.v[k] / b2c) + self.eps
            )


def identity_baseline(schedule: SigmaSchedule, d: int) -> float:
    """Expected loss of the identity predictor D(x) = x.

    E||x + sigma*eps - x||^2 = sigma^2 * d, averaged uniformly over the
    schedule levels (matching how training draws sigma).
    """
    return float(np.mean(schedule.levels**2) * d)


def train_denoiser(
    model: TrainableDenoiser,
    signals: np.ndarray,
    conds,
    schedule: SigmaSchedule,
    tcfg: TrainConfig,
    optimizer: Adam | None = None,
) -> list[tuple[int, float, float]]:
    """Train in place; returns per-step history rows (step, loss, weighted).

    ``loss`` is the plain denoising objective E||D(x + sigma*eps) - x||^2
    (summed over coordinates, averaged over the batch); ``weighted`` is the
    preconditioned residual the optimizer actually descends. Conditioning is
    replaced by the absent marker with probability cond_dropout per sample.
    Pass the optimizer back in to resume a run with its moments intact.
    """
    signals = np.asarray(signals, dtype=np.float64)
    if signals.ndim != 2 or signals.shape[0] == 0:
        raise ValueError(
            f"signals must be a nonempty (N, d) array, got shape {signals.shape}"
        )
    n, d = signals.shape
    if d != model.arch.signal_len:
        raise ValueError(
            f"corpus signal length {d} does not match model signal_len "
            f"{model.arch.signal_len}"
        )
    if conds is None:
        conds = [None] * n
    conds = [cond_array(c) for c in conds]
    if len(conds) != n:
        raise ValueError(f"{len(conds)} conditioning entries for {n} signals")

    rng = np.random.default_rng(tcfg.seed)
    opt = optimizer if optimizer is not None else Adam(lr=tcfg.lr)
    history = []
    start = opt.t
    for step in range(start, start + tcfg.steps):
        idx = rng.integers(0, n, size=tcfg.batch)
        sigmas = sample_training_sigma(schedule, rng, size=tcfg.batch)
        eps = rng.standard_normal((tcfg.batch, d))
        xb = signals[idx]
        noisy = xb + sigmas[:, None] * eps
        keep = rng.random(tcfg.batch) >= tcfg.cond_dropout
        conds_b = [conds[i] if keep[j] else None for j, i in enumerate(idx)]
        plain, weighted, grads = model.loss_and_param_grads(xb, noisy, sigmas, conds_b)
        if not (np.isfinite(plain) and np.isfinite(weighted)):
            raise TrainingDiverged(
                f"non-finite loss at step {step}: plain={plain}, "
                f"weighted={weighted}, sigma range "
                f"[{sigmas.min():.3g}, {sigmas.max():.3g}]"
            )
        opt.step(model.params, grads)
        history.append((step, plain, weighted))
    return history
