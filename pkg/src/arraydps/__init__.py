"""Multichannel blind speech separation by guided diffusion posterior sampling.

The pieces: STFT tools (:mod:`~arraydps.dsp`), a synthetic scene simulator
(:mod:`~arraydps.acoustics`), forward convolutive prediction
(:mod:`~arraydps.fcp`), AuxIVA (:mod:`~arraydps.iva`), denoiser priors
(:mod:`~arraydps.prior`), the sampler (:mod:`~arraydps.sampler`) and
metrics (:mod:`~arraydps.metrics`).
"""

from .acoustics import MixtureFixture, SceneSpec, make_fixture
from .dsp import StftConfig, istft, stft
from .fcp import FcpConfig, FilterTaps, apply_filter, fcp_estimate, fcp_weights
from .iva import IvaConfig, iva_separate, iva_separate_waveform
from .metrics import align_and_eval, sdr_filtered, si_sdr
from .prior import GaussianMixtureDenoiser, GaussianShrinkageDenoiser, OracleDenoiser, tweedie_score
from .sampler import GuidanceConfig, SamplerConfig, SeparationResult, separate, separate_best_of

__version__ = "0.1.0"

__all__ = [
    "MixtureFixture",
    "SceneSpec",
    "make_fixture",
    "StftConfig",
    "stft",
    "istft",
    "FcpConfig",
    "FilterTaps",
    "apply_filter",
    "fcp_estimate",
    "fcp_weights",
    "IvaConfig",
    "iva_separate",
    "iva_separate_waveform",
    "align_and_eval",
    "sdr_filtered",
    "si_sdr",
    "GaussianMixtureDenoiser",
    "GaussianShrinkageDenoiser",
    "OracleDenoiser",
    "tweedie_score",
    "GuidanceConfig",
    "SamplerConfig",
    "SeparationResult",
    "separate",
    "separate_best_of",
]
