"""Closed-form score models used as oracles and in desk-scale tests.

All three priors admit exact posterior means under Gaussian smoothing, so
their denoisers and Jacobians are analytic. The smoothed density of
N(mean, diag(var)) at level sigma is N(mean, diag(var + sigma^2)); mixtures
smooth component-wise.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from dpsep.priors.base import ScoreModel

__all__ = [
    "gaussian_denoise",
    "gmm_denoise",
    "GaussianPrior",
    "GmmPrior",
    "IndependentGmmPrior",
    "LinearDenoiser",
]


def _as_vector(x, name: str) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {x.shape}")
    return x


def gaussian_denoise(mean, var, x_tau, sigma: float) -> np.ndarray:
    """Posterior mean under a diagonal Gaussian prior.

    E[x0 | x_tau] = mean + var / (var + sigma^2) * (x_tau - mean)
    """
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    x_tau = np.asarray(x_tau, dtype=np.float64)
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if np.any(var <= 0):
        raise ValueError("prior variance must be > 0 elementwise")
    b = np.broadcast_shapes(mean.shape, var.shape, x_tau.shape)
    if b != x_tau.shape:
        raise ValueError(
            f"prior shapes {mean.shape}/{var.shape} do not broadcast onto "
            f"state shape {x_tau.shape}"
        )
    shrink = var / (var + sigma * sigma)
    return mean + shrink * (x_tau - mean)


def _gmm_posterior(weights, means, variances, x_tau, sigma):
    """Responsibilities and per-component shrinkages for the smoothed mixture.

    means/variances have shape (M, d); the smoothed component k is
    N(means[k], diag(variances[k] + sigma^2)).
    """
    s2 = sigma * sigma
    tot = variances + s2  # (M, d)
    diff = x_tau[None, :] - means  # (M, d)
    log_r = (
        np.log(weights)
        - 0.5 * np.sum(diff * diff / tot + np.log(2.0 * np.pi * tot), axis=1)
    )
    log_r = log_r - logsumexp(log_r)
    r = np.exp(log_r)  # (M,)
    shrink = variances / tot  # (M, d)
    comp_means = means + shrink * diff  # (M, d)
    return r, shrink, comp_means, diff, tot


def gmm_denoise(weights, means, variances, x_tau, sigma: float) -> np.ndarray:
    """Posterior mean under a Gaussian mixture prior (diagonal components).

    Responsibility-weighted sum of the per-component Gaussian shrinkages,
    with responsibilities taken under N(x_tau; mean_k, var_k + sigma^2).
    """
    weights, means, variances, x_tau = _gmm_args(weights, means, variances, x_tau)
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    r, _, comp_means, _, _ = _gmm_posterior(weights, means, variances, x_tau, sigma)
    return r @ comp_means


def _per_component(a, name: str) -> np.ndarray:
    """Coerce per-component parameters to shape (M, d); 1-D input means
    one scalar per component (d = 1, broadcastable)."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        a = a[None]
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must have shape (M,) or (M, d), got {a.shape}")
    return a


def _gmm_args(weights, means, variances, x_tau):
    weights = _as_vector(weights, "weights")
    means = _per_component(means, "means")
    variances = _per_component(variances, "variances")
    x_tau = _as_vector(x_tau, "x_tau")
    M = weights.shape[0]
    if means.shape[0] != M or variances.shape[0] != M:
        raise ValueError(
            f"component count mismatch: {M} weights, {means.shape[0]} means, "
            f"{variances.shape[0]} variances"
        )
    d = x_tau.shape[0]
    means = np.broadcast_to(means, (M, d)).astype(np.float64)
    variances = np.broadcast_to(variances, (M, d)).astype(np.float64)
    if np.any(variances <= 0):
        raise ValueError("mixture variances must be > 0")
    if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise ValueError("mixture weights must be positive and sum to 1")
    return weights, means, variances, x_tau


class GaussianPrior(ScoreModel):
    """Diagonal Gaussian data prior; denoiser and vjp in closed form."""

    def __init__(self, mean, var, dim: int | None = None):
        mean = np.asarray(mean, dtype=np.float64)
        var = np.asarray(var, dtype=np.float64)
        if np.any(var <= 0):
            raise ValueError("prior variance must be > 0 elementwise")
        if dim is None and mean.ndim == 1:
            dim = mean.shape[0]
        self.mean = mean
        self.var = var
        self.dim = dim

    def denoise(self, x_tau, sigma, cond=None):
        x_tau = self._check(x_tau, sigma)
        return gaussian_denoise(self.mean, self.var, x_tau, sigma)

    def vjp(self, x_tau, sigma, cond, v):
        x_tau = self._check(x_tau, sigma)
        v = np.asarray(v, dtype=np.float64)
        # the Jacobian is diag(var / (var + sigma^2)), symmetric
        return (self.var / (self.var + sigma * sigma)) * v


class GmmPrior(ScoreModel):
    """Joint Gaussian-mixture prior over R^d with diagonal components."""

    def __init__(self, weights, means, variances, dim: int | None = None):
        self.weights = _as_vector(weights, "weights")
        self.means = _per_component(means, "means")
        self.variances = _per_component(variances, "variances")
        if np.any(self.variances <= 0):
            raise ValueError("mixture variances must be > 0")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        if dim is None and self.means.shape[1] > 1:
            dim = self.means.shape[1]
        self.dim = dim

    def denoise(self, x_tau, sigma, cond=None):
        x_tau = self._check(x_tau, sigma)
        return gmm_denoise(self.weights, self.means, self.variances, x_tau, sigma)

    def vjp(self, x_tau, sigma, cond, v):
        """Exact J^T v for the mixture posterior mean.

        D(x) = sum_k r_k(x) s_k(x) with s_k = m_k + c_k (x - m_k) and
        softmax responsibilities r_k, so
        J = sum_k r_k diag(c_k) + sum_k s_k (grad r_k)^T,
        grad r_k = r_k (u_k - sum_l r_l u_l), u_k = -(x - m_k)/(v_k + sigma^2).
        """
        x_tau = self._check(x_tau, sigma)
        v = np.asarray(v, dtype=np.float64)
        w, means, variances, x_tau = _gmm_args(
            self.weights, self.means, self.variances, x_tau
        )
        r, shrink, comp_means, diff, tot = _gmm_posterior(
            w, means, variances, x_tau, sigma
        )
        u = -diff / tot  # (M, d)
        u_bar = r @ u  # (d,)
        out = (r @ shrink) * v
        sv = comp_means @ v  # (M,)
        out += (r * sv) @ (u - u_bar[None, :])
        return out


class IndependentGmmPrior(ScoreModel):
    """Product of one shared 1-D Gaussian mixture per coordinate.

    Coordinates are independent, so one d-dimensional run of the sampler is
    exactly d independent 1-D draws; the Monte-Carlo distribution tests use
    this to vectorize thousands of runs. The per-coordinate formulas are the
    d = 1 case of ``gmm_denoise``.
    """

    def __init__(self, weights, means, variances):
        self.weights = _as_vector(weights, "weights")
        self.means = _as_vector(means, "means")
        self.variances = _as_vector(variances, "variances")
        M = self.weights.shape[0]
        if self.means.shape[0] != M or self.variances.shape[0] != M:
            raise ValueError("weights, means, variances must share one length")
        if np.any(self.variances <= 0):
            raise ValueError("mixture variances must be > 0")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        self.dim = None

    def _responsibilities(self, x_tau, sigma):
        s2 = sigma * sigma
        tot = (self.variances + s2)[:, None]  # (M, 1)
        diff = x_tau[None, :] - self.means[:, None]  # (M, d)
        log_r = (
            np.log(self.weights)[:, None]
            - 0.5 * (diff * diff / tot + np.log(2.0 * np.pi * tot))
        )
        log_r = log_r - logsumexp(log_r, axis=0, keepdims=True)
        return np.exp(log_r), diff, tot

    def denoise(self, x_tau, sigma, cond=None):
        x_tau = self._check(x_tau, sigma)
        r, diff, tot = self._responsibilities(x_tau, sigma)
        shrink = self.variances[:, None] / tot
        comp_means = self.means[:, None] + shrink * diff
        return np.sum(r * comp_means, axis=0)

    def vjp(self, x_tau, sigma, cond, v):
        # coordinates are independent, so the Jacobian is diagonal
        x_tau = self._check(x_tau, sigma)
        v = np.asarray(v, dtype=np.float64)
        r, diff, tot = self._responsibilities(x_tau, sigma)
        shrink = self.variances[:, None] / tot
        comp_means = self.means[:, None] + shrink * diff
        u = -diff / tot
        u_bar = np.sum(r * u, axis=0, keepdims=True)
        deriv = np.sum(r * shrink, axis=0) + np.sum(
            comp_means * r * (u - u_bar), axis=0
        )
        return deriv * v


class LinearDenoiser(ScoreModel):
    """D(x) = A x + b; trivial oracle for the vjp contract."""

    def __init__(self, a: np.ndarray, b=0.0):
        self.a = np.asarray(a, dtype=np.float64)
        if self.a.ndim != 2 or self.a.shape[0] != self.a.shape[1]:
            raise ValueError(f"A must be square, got shape {self.a.shape}")
        self.b = np.asarray(b, dtype=np.float64)
        self.dim = self.a.shape[0]

    def denoise(self, x_tau, sigma, cond=None):
        x_tau = self._check(x_tau, sigma)
        return self.a @ x_tau + self.b

    def vjp(self, x_tau, sigma, cond, v):
        return self.a.T @ np.asarray(v, dtype=np.float64)
