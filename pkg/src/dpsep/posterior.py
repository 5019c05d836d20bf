"""Posterior scores for the joint K-speaker + noise state.

Given the mixture y and the current joint state at level sigma, each
sub-vector's posterior score is its prior (Tweedie) score minus a
zeta-normalized gradient of the compressed-spectrogram reconstruction loss.
The loss depends on the denoised estimates only through their sum, so its
gradient with respect to the summed estimate is computed once and pulled
back through each denoiser's vjp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dpsep.priors.base import ScoreModel, cfg_denoise, cfg_vjp
from dpsep.spectral import StftConfig, rec_loss_and_grad

__all__ = [
    "JointState",
    "GuidanceConfig",
    "GuidanceDiagnostics",
    "PosteriorScores",
    "NonFiniteStateError",
    "posterior_score",
    "guidance_norms",
]


class NonFiniteStateError(RuntimeError):
    """A score or state went non-finite; message carries diagnostics."""


@dataclass
class JointState:
    """K speech sub-vectors plus one noise sub-vector at a shared sigma."""

    speech: list
    noise: np.ndarray
    sigma: float

    def __post_init__(self):
        self.speech = [np.asarray(s, dtype=np.float64) for s in self.speech]
        self.noise = np.asarray(self.noise, dtype=np.float64)
        d = self.noise.shape
        for i, s in enumerate(self.speech):
            if s.shape != d:
                raise ValueError(
                    f"speech vector {i} has shape {s.shape}, noise has {d}"
                )
        if not self.sigma > 0:
            raise ValueError(f"state sigma must be > 0, got {self.sigma}")

    @property
    def k(self) -> int:
        return len(self.speech)

    @property
    def d(self) -> int:
        return self.noise.shape[0]


@dataclass(frozen=True)
class GuidanceConfig:
    """Reconstruction-guidance strength and its normalization constants."""

    d: int
    zeta: float = 0.5
    grad_norm_floor: float = 1e-12

    def __post_init__(self):
        if self.zeta < 0:
            raise ValueError(f"zeta must be >= 0, got {self.zeta}")
        if self.grad_norm_floor <= 0:
            raise ValueError(
                f"grad_norm_floor must be > 0, got {self.grad_norm_floor}"
            )
        if self.d < 1:
            raise ValueError(f"signal length d must be >= 1, got {self.d}")


@dataclass(frozen=True)
class GuidanceDiagnostics:
    sigma: float
    rec_loss: float
    zeta_x: float
    zeta_n: float
    speech_grad_norm: float
    noise_grad_norm: float
    source_grad_norms: tuple


@dataclass(frozen=True)
class PosteriorScores:
    speech_scores: list
    noise_score: np.ndarray
    diagnostics: GuidanceDiagnostics


def posterior_score(
    y: np.ndarray,
    state: JointState,
    speech_model: ScoreModel,
    noise_model: ScoreModel,
    conds,
    gcfg: GuidanceConfig,
    stft_cfg: StftConfig,
    cfg_weight: float = 0.5,
    y_compressed: np.ndarray | None = None,
) -> PosteriorScores:
    """Guided scores for every sub-vector of the joint state.

    Steps: denoise the noise state, CFG-denoise each speech state, evaluate
    the compressed-spectrogram loss of the summed estimates against y, pull
    the shared loss gradient back through each denoiser's vjp, normalize by
    zeta * sqrt(d) / (sigma * ||grad||) with the speech norm taken over the
    concatenated speech gradient, and subtract from the prior scores.

    ``y_compressed`` optionally carries a precomputed compress(stft(y)) so
    samplers do not redo it every step.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (state.d,):
        raise ValueError(f"mixture shape {y.shape} does not match state d={state.d}")
    if gcfg.d != state.d:
        raise ValueError(f"guidance config d={gcfg.d} does not match state d={state.d}")
    if conds is None:
        conds = [None] * state.k
    if len(conds) != state.k:
        raise ValueError(f"{len(conds)} conditioning entries for K={state.k} sources")
    sigma = float(state.sigma)
    s2 = sigma * sigma

    n_hat = noise_model.denoise(state.noise, sigma, None)
    noise_prior = (n_hat - state.noise) / s2
    estimates = [n_hat]
    speech_priors = []
    for x_i, cond_i in zip(state.speech, conds):
        x_hat = cfg_denoise(speech_model, x_i, sigma, cond_i, cfg_weight)
        estimates.append(x_hat)
        speech_priors.append((x_hat - x_i) / s2)

    loss, g = rec_loss_and_grad(y, estimates, stft_cfg, y_compressed=y_compressed)

    noise_grad = noise_model.vjp(state.noise, sigma, None, g)
    speech_grads = [
        cfg_vjp(speech_model, x_i, sigma, cond_i, cfg_weight, g)
        for x_i, cond_i in zip(state.speech, conds)
    ]

    source_norms = tuple(float(np.linalg.norm(gi)) for gi in speech_grads)
    speech_norm = float(np.sqrt(np.sum(np.square(source_norms))))
    noise_norm = float(np.linalg.norm(noise_grad))
    root_d = np.sqrt(gcfg.d)
    zeta_x = gcfg.zeta * root_d / (sigma * max(speech_norm, gcfg.grad_norm_floor))
    zeta_n = gcfg.zeta * root_d / (sigma * max(noise_norm, gcfg.grad_norm_floor))

    speech_scores = [p - zeta_x * gi for p, gi in zip(speech_priors, speech_grads)]
    noise_score = noise_prior - zeta_n * noise_grad

    diag = GuidanceDiagnostics(
        sigma=sigma,
        rec_loss=loss,
        zeta_x=float(zeta_x),
        zeta_n=float(zeta_n),
        speech_grad_norm=speech_norm,
        noise_grad_norm=noise_norm,
        source_grad_norms=source_norms,
    )
    for name, vec in [("noise", noise_score)] + [
        (f"speech[{i}]", s) for i, s in enumerate(speech_scores)
    ]:
        if not np.all(np.isfinite(vec)):
            raise NonFiniteStateError(
                f"non-finite posterior score for {name} at sigma={sigma:.6g}: "
                f"rec_loss={loss:.6g}, zeta_x={zeta_x:.6g}, zeta_n={zeta_n:.6g}"
            )
    return PosteriorScores(
        speech_scores=speech_scores, noise_score=noise_score, diagnostics=diag
    )


def guidance_norms(scores: PosteriorScores) -> dict:
    """Diagnostics of one posterior evaluation as a flat logging record."""
    diag = scores.diagnostics
    rec = {
        "sigma": diag.sigma,
        "rec_loss": diag.rec_loss,
        "zeta_x": diag.zeta_x,
        "zeta_n": diag.zeta_n,
        "speech_grad_norm": diag.speech_grad_norm,
        "noise_grad_norm": diag.noise_grad_norm,
    }
    for i, norm in enumerate(diag.source_grad_norms):
        rec[f"grad_norm_x{i + 1}"] = norm
    return rec
