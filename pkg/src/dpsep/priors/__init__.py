"""Score models: analytic priors, the trainable frame denoiser, guidance glue.

Every model implements the ScoreModel interface: a ``denoise`` map returning
the posterior-mean estimate of the clean signal, and ``vjp``, the exact
transpose-Jacobian product of that map, which the posterior guidance chain
requires.
"""

from dpsep.priors.base import (
    ConditioningVector,
    ScoreModel,
    cfg_denoise,
    cfg_vjp,
    score_from_denoiser,
    vjp_finite_diff_oracle,
)
from dpsep.priors.analytic import (
    GaussianPrior,
    GmmPrior,
    IndependentGmmPrior,
    LinearDenoiser,
    gaussian_denoise,
    gmm_denoise,
)
from dpsep.priors.network import DenoiserArch, TrainableDenoiser
from dpsep.priors.training import (
    Adam,
    TrainConfig,
    TrainingDiverged,
    identity_baseline,
    train_denoiser,
)
from dpsep.priors.checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "ConditioningVector",
    "ScoreModel",
    "cfg_denoise",
    "cfg_vjp",
    "score_from_denoiser",
    "vjp_finite_diff_oracle",
    "GaussianPrior",
    "GmmPrior",
    "IndependentGmmPrior",
    "LinearDenoiser",
    "gaussian_denoise",
    "gmm_denoise",
    "DenoiserArch",
    "TrainableDenoiser",
    "Adam",
    "TrainConfig",
    "TrainingDiverged",
    "identity_baseline",
    "train_denoiser",
    "CheckpointError",
    "load_checkpoint",
    "save_checkpoint",
]
