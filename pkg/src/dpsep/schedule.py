"""Noise-level ladder for the variance-exploding diffusion process.

The continuous process uses sigma(tau) = tau, so a schedule is just a
decreasing grid of sigma values. The grid is affine in sigma^(1/rho):
large rho packs most of the steps near sigma_min.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SigmaSchedule",
    "ChurnConfig",
    "build_schedule",
    "churn_gamma",
    "sample_training_sigma",
]


@dataclass(frozen=True)
class SigmaSchedule:
    """Strictly decreasing sigma grid from sigma_max down to sigma_min."""

    sigma_max: float
    sigma_min: float
    rho: float
    n_steps: int
    levels: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.levels.shape != (self.n_steps,):
            raise ValueError(
                f"levels has shape {self.levels.shape}, expected ({self.n_steps},)"
            )


@dataclass(frozen=True)
class ChurnConfig:
    """Stochastic churn parameters for the second-order sampler.

    s_churn is the total noise-injection budget spread over the steps;
    s_tmin/s_tmax bound the sigma range in which churn is active and
    s_noise scales the injected noise.
    """

    s_churn: float = 0.0
    s_tmin: float = 0.0
    s_tmax: float = float("inf")
    s_noise: float = 1.0

    def __post_init__(self):
        if self.s_churn < 0:
            raise ValueError(f"s_churn must be >= 0, got {self.s_churn}")
        if self.s_noise <= 0:
            raise ValueError(f"s_noise must be > 0, got {self.s_noise}")
        if self.s_tmin > self.s_tmax:
            raise ValueError(
                f"s_tmin ({self.s_tmin}) must not exceed s_tmax ({self.s_tmax})"
            )


def build_schedule(
    sigma_max: float, sigma_min: float, rho: float, n_steps: int
) -> SigmaSchedule:
    """Build the decreasing sigma grid, affine in sigma^(1/rho).

    levels[i] = (sigma_max^(1/rho) + i/(n_steps-1) *
                 (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho

    Endpoints are pinned exactly to sigma_max and sigma_min.
    """
    if not (0 < sigma_min < sigma_max):
        raise ValueError(
            f"need 0 < sigma_min < sigma_max, got sigma_min={sigma_min}, "
            f"sigma_max={sigma_max}"
        )
    if rho <= 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    if n_steps < 2:
        raise ValueError(f"n_steps must be >= 2, got {n_steps}")

    ramp = np.linspace(0.0, 1.0, n_steps)
    inv_rho = 1.0 / rho
    levels = (
        sigma_max**inv_rho + ramp * (sigma_min**inv_rho - sigma_max**inv_rho)
    ) ** rho
    levels[0] = sigma_max
    levels[-1] = sigma_min
    if not np.all(np.diff(levels) < 0):
        raise ValueError("schedule is not strictly decreasing; check parameters")
    levels.setflags(write=False)
    return SigmaSchedule(
        sigma_max=float(sigma_max),
        sigma_min=float(sigma_min),
        rho=float(rho),
        n_steps=int(n_steps),
        levels=levels,
    )


def churn_gamma(schedule: SigmaSchedule, i: int, churn: ChurnConfig) -> float:
    """Per-step churn factor gamma_i.

    gamma_i = min(s_churn / n_steps, sqrt(2) - 1) when levels[i] lies in
    [s_tmin, s_tmax], else 0. The sqrt(2) - 1 cap keeps the churned sigma
    sigma_hat = sigma_i * (1 + gamma) at most sqrt(2) * sigma_i.
    """
    if not 0 <= i < schedule.n_steps:
        raise IndexError(f"step index {i} out of range [0, {schedule.n_steps})")
    sigma = schedule.levels[i]
    if churn.s_tmin <= sigma <= churn.s_tmax:
        return min(churn.s_churn / schedule.n_steps, np.sqrt(2.0) - 1.0)
    return 0.0


def sample_training_sigma(
    schedule: SigmaSchedule, rng: np.random.Generator, size: int | None = None
):
    """Draw sigma uniformly over the schedule's grid indices."""
    idx = rng.integers(0, schedule.n_steps, size=size)
    return schedule.levels[idx]
