"""Stochastic second-order integrator for the coupled reverse ODEs.

Each transition between adjacent schedule levels runs: (a) churn, inflating
sigma_i to sigma_hat = sigma_i * (1 + gamma) by adding fresh Gaussian noise
of matching variance; (b) an Euler step along the drift -sigma_hat * score;
(c) a Heun correction using the score re-evaluated at the next level. All
K + 1 sub-vectors share one sigma ladder and both score evaluations use the
full guided posterior score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dpsep.posterior import (
    GuidanceConfig,
    JointState,
    NonFiniteStateError,
    guidance_norms,
    posterior_score,
)
from dpsep.priors.base import ScoreModel, cfg_denoise, score_from_denoiser
from dpsep.schedule import ChurnConfig, SigmaSchedule, churn_gamma
from dpsep.spectral import StftConfig, compress, stft

__all__ = [
    "SamplerConfig",
    "Trajectory",
    "init_state",
    "sample_posterior",
    "unconditional_sample",
]


@dataclass(frozen=True)
class SamplerConfig:
    schedule: SigmaSchedule
    churn: ChurnConfig = ChurnConfig()
    seed: int = 0
    cfg_weight: float = 0.5
    final_denoise: bool = True


@dataclass
class Trajectory:
    """Per-step diagnostics snapshots, one row per schedule transition."""

    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def init_state(K: int, d: int, sigma_max: float, rng) -> JointState:
    """K + 1 sub-vectors drawn i.i.d. from N(0, sigma_max^2 I)."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if not sigma_max > 0:
        raise ValueError(f"sigma_max must be > 0, got {sigma_max}")
    rng = _as_rng(rng)
    vecs = [sigma_max * rng.standard_normal(d) for _ in range(K + 1)]
    return JointState(speech=vecs[:-1], noise=vecs[-1], sigma=float(sigma_max))


def _integrate(score_fn, vectors, schedule: SigmaSchedule, churn: ChurnConfig, rng,
               trajectory: Trajectory | None):
    """Shared churn + Heun loop over a list of sub-vectors.

    score_fn(vectors, sigma) -> (scores, diag_row_or_None); the loop owns
    the stepping, the caller owns the score semantics.
    """
    levels = schedule.levels
    for i in range(schedule.n_steps - 1):
        sigma = float(levels[i])
        sigma_next = float(levels[i + 1])
        gamma = churn_gamma(schedule, i, churn)
        if gamma > 0.0:
            sigma_hat = sigma * (1.0 + gamma)
            amp = np.sqrt(sigma_hat**2 - sigma**2) * churn.s_noise
            vectors = [v + amp * rng.standard_normal(v.shape[0]) for v in vectors]
        else:
            sigma_hat = sigma
        scores, diag = score_fn(vectors, sigma_hat)
        h = sigma_next - sigma_hat
        d1 = [-sigma_hat * s for s in scores]
        mid = [v + h * g for v, g in zip(vectors, d1)]
        if sigma_next > 0.0:
            scores2, _ = score_fn(mid, sigma_next)
            vectors = [
                v + 0.5 * h * (g1 - sigma_next * g2)
                for v, g1, g2 in zip(vectors, d1, scores2)
            ]
        else:
            vectors = mid
        for j, v in enumerate(vectors):
            if not np.all(np.isfinite(v)):
                raise NonFiniteStateError(
                    f"non-finite state in sub-vector {j} after step {i} "
                    f"(sigma {sigma:.6g} -> {sigma_next:.6g})"
                )
        if trajectory is not None:
            # ladder level wins over the diagnostics' score-eval sigma,
            # which already appears as sigma_hat
            row = dict(diag) if diag else {}
            row.update({"step": i, "sigma": sigma, "sigma_hat": sigma_hat})
            for j, v in enumerate(vectors[:-1]):
                row[f"norm_x{j + 1}"] = float(np.linalg.norm(v))
            row["norm_n"] = float(np.linalg.norm(vectors[-1]))
            trajectory.rows.append(row)
    return vectors


def sample_posterior(
    y: np.ndarray,
    K: int,
    conds,
    speech_model: ScoreModel,
    noise_model: ScoreModel,
    scfg: SamplerConfig,
    gcfg: GuidanceConfig,
    stft_cfg: StftConfig,
):
    """Recover K speech estimates plus one noise estimate from the mixture.

    Returns (estimates, trajectory) with the noise estimate last. With
    ``final_denoise`` the outputs are the denoised estimates at sigma_min,
    otherwise the raw terminal state.
    """
    y = np.asarray(y, dtype=np.float64)
    if conds is None:
        conds = [None] * K
    if len(conds) != K:
        raise ValueError(f"{len(conds)} conditioning entries for K={K} sources")
    rng = np.random.default_rng(scfg.seed)
    schedule = scfg.schedule
    state0 = init_state(K, y.shape[0], schedule.sigma_max, rng)
    y_compressed = compress(stft(y, stft_cfg), stft_cfg)

    def score_fn(vectors, sigma):
        state = JointState(speech=vectors[:-1], noise=vectors[-1], sigma=sigma)
        ps = posterior_score(
            y,
            state,
            speech_model,
            noise_model,
            conds,
            gcfg,
            stft_cfg,
            cfg_weight=scfg.cfg_weight,
            y_compressed=y_compressed,
        )
        return ps.speech_scores + [ps.noise_score], guidance_norms(ps)

    trajectory = Trajectory()
    vectors = _integrate(
        score_fn, state0.speech + [state0.noise], schedule, scfg.churn, rng, trajectory
    )
    sigma_end = float(schedule.sigma_min)
    if scfg.final_denoise:
        estimates = [
            cfg_denoise(speech_model, x, sigma_end, c, scfg.cfg_weight)
            for x, c in zip(vectors[:-1], conds)
        ]
        estimates.append(noise_model.denoise(vectors[-1], sigma_end, None))
    else:
        estimates = vectors
    return estimates, trajectory


def unconditional_sample(
    model: ScoreModel,
    d: int,
    scfg: SamplerConfig,
    cond=None,
    rng=None,
) -> np.ndarray:
    """One draw approximating the model's data prior (guidance off).

    Same stepping as ``sample_posterior`` for a single signal with zeta = 0;
    a conditioning vector routes through classifier-free guidance with the
    config's weight.
    """
    rng = _as_rng(scfg.seed if rng is None else rng)
    schedule = scfg.schedule
    x0 = schedule.sigma_max * rng.standard_normal(d)

    if cond is None:

        def score_fn(vectors, sigma):
            return [score_from_denoiser(model, vectors[0], sigma, None)], None

    else:

        def score_fn(vectors, sigma):
            den = cfg_denoise(model, vectors[0], sigma, cond, scfg.cfg_weight)
            return [(den - vectors[0]) / (sigma * sigma)], None

    vectors = _integrate(score_fn, [x0], schedule, scfg.churn, rng, None)
    sigma_end = float(schedule.sigma_min)
    if scfg.final_denoise:
        if cond is None:
            return model.denoise(vectors[0], sigma_end, None)
        return cfg_denoise(model, vectors[0], sigma_end, cond, scfg.cfg_weight)
    return vectors[0]
