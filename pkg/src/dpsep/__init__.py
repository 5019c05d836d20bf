"""Single-channel source separation by diffusion posterior sampling.

The package recovers K band-limited speech-like sources plus one structured
noise source from a single mixture waveform. Each source class has its own
score model (analytic for tests, a trained frame denoiser for the pipeline);
the sampler integrates the joint reverse diffusion while a compressed
spectrogram residual against the observed mixture guides every step.
"""

from dpsep.schedule import ChurnConfig, SigmaSchedule, build_schedule
from dpsep.spectral import StftConfig, compress, istft, rec_loss, stft
from dpsep.posterior import GuidanceConfig, NonFiniteStateError, posterior_score
from dpsep.sampler import SamplerConfig, sample_posterior, unconditional_sample
from dpsep.mixtures import (
    MixSpec,
    ToyCorpusSpec,
    evaluate_run,
    gen_toy_corpus,
    make_mixture,
    si_sdr,
)

__version__ = "0.1.0"

__all__ = [
    "ChurnConfig",
    "SigmaSchedule",
    "build_schedule",
    "StftConfig",
    "compress",
    "istft",
    "rec_loss",
    "stft",
    "GuidanceConfig",
    "NonFiniteStateError",
    "posterior_score",
    "SamplerConfig",
    "sample_posterior",
    "unconditional_sample",
    "MixSpec",
    "ToyCorpusSpec",
    "evaluate_run",
    "gen_toy_corpus",
    "make_mixture",
    "si_sdr",
    "__version__",
]
