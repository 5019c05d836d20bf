"""ScoreModel interface, denoiser-to-score conversion, classifier-free guidance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConditioningVector",
    "ScoreModel",
    "cond_array",
    "score_from_denoiser",
    "cfg_denoise",
    "cfg_vjp",
    "vjp_finite_diff_oracle",
]


@dataclass(frozen=True)
class ConditioningVector:
    """Fixed-dimension conditioning features with an explicit presence flag.

    ``present=False`` (or passing None instead) selects the unconditional
    branch of a conditional model.
    """

    values: np.ndarray
    present: bool = True


def cond_array(cond) -> np.ndarray | None:
    """Normalize conditioning to a plain array, or None when absent."""
    if cond is None:
        return None
    if isinstance(cond, ConditioningVector):
        if not cond.present:
            return None
        return np.asarray(cond.values, dtype=np.float64)
    return np.asarray(cond, dtype=np.float64)


class ScoreModel:
    """Denoiser with an exact transpose-Jacobian product.

    denoise(x_tau, sigma, cond) estimates the clean signal from a noisy
    state at level sigma; vjp(x_tau, sigma, cond, v) returns J^T v where
    J = d denoise / d x_tau. ``dim`` is the supported signal length, or
    None when the model works at any length.
    """

    dim: int | None = None

    def denoise(self, x_tau: np.ndarray, sigma: float, cond=None) -> np.ndarray:
        raise NotImplementedError

    def vjp(
        self, x_tau: np.ndarray, sigma: float, cond, v: np.ndarray
    ) -> np.ndarray:
        raise NotImplementedError

    def _check(self, x_tau: np.ndarray, sigma: float) -> np.ndarray:
        x_tau = np.asarray(x_tau, dtype=np.float64)
        if x_tau.ndim != 1:
            raise ValueError(f"expected a 1-D state, got shape {x_tau.shape}")
        if self.dim is not None and x_tau.shape[0] != self.dim:
            raise ValueError(
                f"state length {x_tau.shape[0]} does not match model dim {self.dim}"
            )
        if not sigma > 0:
            raise ValueError(f"sigma must be > 0, got {sigma}")
        return x_tau


def score_from_denoiser(
    model: ScoreModel, x_tau: np.ndarray, sigma: float, cond=None
) -> np.ndarray:
    """Tweedie relation: score of the sigma-smoothed density.

    grad log p_sigma(x) = (denoise(x, sigma) - x) / sigma^2
    """
    x_tau = np.asarray(x_tau, dtype=np.float64)
    return (model.denoise(x_tau, sigma, cond) - x_tau) / (sigma * sigma)


def cfg_denoise(
    model: ScoreModel, x_tau: np.ndarray, sigma: float, cond, w: float
) -> np.ndarray:
    """Classifier-free guided estimate D_uncond + w * (D_cond - D_uncond).

    w = 0 is the pure unconditional branch, w = 1 the pure conditional one;
    w is not clamped to [0, 1].
    """
    if w == 0.0:
        return model.denoise(x_tau, sigma, None)
    c = cond_array(cond)
    if c is None:
        raise ValueError("conditioning is required when the guidance weight w != 0")
    d_uncond = model.denoise(x_tau, sigma, None)
    d_cond = model.denoise(x_tau, sigma, c)
    return d_uncond + w * (d_cond - d_uncond)


def cfg_vjp(
    model: ScoreModel, x_tau: np.ndarray, sigma: float, cond, w: float, v: np.ndarray
) -> np.ndarray:
    """Transpose-Jacobian product of the CFG-combined estimate.

    The combination is linear, so J^T v = (1 - w) J_uncond^T v + w J_cond^T v.
    """
    if w == 0.0:
        return model.vjp(x_tau, sigma, None, v)
    c = cond_array(cond)
    if c is None:
        raise ValueError("conditioning is required when the guidance weight w != 0")
    vu = model.vjp(x_tau, sigma, None, v)
    vc = model.vjp(x_tau, sigma, c, v)
    return vu + w * (vc - vu)


def vjp_finite_diff_oracle(
    model: ScoreModel,
    x_tau: np.ndarray,
    sigma: float,
    cond,
    v: np.ndarray,
    h: float = 1e-5,
) -> np.ndarray:
    """Central-difference estimate of J^T v, for tests only.

    (J^T v)_j = sum_k v_k dD_k/dx_j, probed one coordinate at a time:
    (D(x + h e_j) - D(x - h e_j)) . v / (2h).
    """
    if not h > 0:
        raise ValueError(f"step h must be > 0, got {h}")
    x_tau = np.asarray(x_tau, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(x_tau)
    for j in range(x_tau.shape[0]):
        xp = x_tau.copy()
        xm = x_tau.copy()
        xp[j] += h
        xm[j] -= h
        dp = model.denoise(xp, sigma, cond)
        dm = model.denoise(xm, sigma, cond)
        out[j] = np.dot(dp - dm, v) / (2.0 * h)
    return out
