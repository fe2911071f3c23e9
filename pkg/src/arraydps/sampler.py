"""Guided diffusion posterior sampling over virtual sources.

The state is a ``(K, T)`` array of noisy virtual sources.  Each score
evaluation denoises every source, relates the denoised estimates to all
microphones through multi-frame STFT filters (FCP, or the IVA-derived
filters early on) and adds the normalised gradient of the mixture residual
to the Tweedie prior score.  The stochastic 2nd-order Heun loop follows the
EDM sampler.

Randomness is drawn from generators keyed by ``(seed, tag, step, source)``,
so a run is reproducible regardless of evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dsp import StftConfig, istft, istft_adjoint, stft, stft_adjoint
from .fcp import (
    DegenerateRegressorError,
    FcpConfig,
    FilterTaps,
    apply_filter,
    fcp_estimate,
    fcp_weights,
    mix_filters,
    mix_filters_adjoint,
)
from .iva import IvaConfig, iva_init_filters, iva_separate_waveform
from .metrics import recon_snr
from .prior import Denoiser

__all__ = [
    "NoiseSchedule",
    "ChurnSchedule",
    "GuidanceConfig",
    "SamplerConfig",
    "SamplerError",
    "ScoreTerms",
    "SeparationContext",
    "SeparationResult",
    "build_sigma_schedule",
    "build_churn_schedule",
    "prepare",
    "posterior_score",
    "likelihood_loss",
    "estimate_filters",
    "frozen_likelihood",
    "separate",
    "separate_best_of",
]

_TAG_INIT = 0
_TAG_CHURN = 1


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    sigmas: np.ndarray  # sigma_0 .. sigma_N, last entry 0
    sigma_max: float
    sigma_min: float
    rho: float

    @property
    def n_steps(self) -> int:
        return self.sigmas.size - 1


@dataclass(frozen=True)
class ChurnSchedule:
    gammas: np.ndarray  # gamma_0 .. gamma_{N-1}
    s_churn: float
    s_min: float
    s_max: float
    s_noise: float


def build_sigma_schedule(n_steps: int, sigma_max: float, sigma_min: float, rho: float = 10.0) -> NoiseSchedule:
    """EDM power-law schedule from ``sigma_max`` down to ``sigma_min``, then 0."""
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    if not (sigma_max > sigma_min > 0):
        raise ValueError("need sigma_max > sigma_min > 0")
    if not rho > 0:
        raise ValueError("rho must be > 0")
    i = np.arange(n_steps)
    a, b = sigma_max ** (1.0 / rho), sigma_min ** (1.0 / rho)
    sigmas = (a + i / (n_steps - 1) * (b - a)) ** rho
    sigmas[0], sigmas[-1] = sigma_max, sigma_min
    return NoiseSchedule(np.append(sigmas, 0.0), float(sigma_max), float(sigma_min), float(rho))


def build_churn_schedule(
    sched: NoiseSchedule,
    s_churn: float = 30.0,
    s_min: float = 0.0,
    s_max: float = 50.0,
    s_noise: float = 1.0,
) -> ChurnSchedule:
    if s_churn < 0 or s_noise < 0:
        raise ValueError("s_churn and s_noise must be >= 0")
    if s_min > s_max:
        raise ValueError("s_min must not exceed s_max")
    sig = sched.sigmas[:-1]
    gamma = min(s_churn / sched.n_steps, math.sqrt(2.0) - 1.0)
    gammas = np.where((sig >= s_min) & (sig <= s_max), gamma, 0.0)
    return ChurnSchedule(gammas, float(s_churn), float(s_min), float(s_max), float(s_noise))


@dataclass(frozen=True)
class GuidanceConfig:
    """``xi=None`` picks 2 with IVA initialisation and 6 without."""

    xi: float | None = None
    n_ref: int = 200
    n_fg: int = 100
    lam: float = 1.3
    fcp: FcpConfig = field(default_factory=FcpConfig)

    def __post_init__(self):
        if self.xi is not None and self.xi < 0:
            raise ValueError("xi must be >= 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.n_ref < 0 or self.n_fg < 0:
            raise ValueError("n_ref and n_fg must be >= 0")


@dataclass(frozen=True)
class SamplerConfig:
    """``sigma_max=None`` picks 0.8 with IVA initialisation and 2.0 without."""

    n_steps: int = 400
    sigma_max: float | None = None
    sigma_min: float = 1e-6
    rho: float = 10.0
    s_churn: float = 30.0
    s_min: float = 0.0
    s_max: float = 50.0
    s_noise: float = 1.0
    iva_init: bool = True
    stft: StftConfig = field(default_factory=StftConfig)
    iva: IvaConfig = field(default_factory=IvaConfig)

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError("n_steps must be >= 2")

    def resolved_sigma_max(self) -> float:
        if self.sigma_max is not None:
            return self.sigma_max
        return 0.8 if self.iva_init else 2.0

    def schedules(self) -> tuple[NoiseSchedule, ChurnSchedule]:
        sched = build_sigma_schedule(self.n_steps, self.resolved_sigma_max(), self.sigma_min, self.rho)
        churn = build_churn_schedule(sched, self.s_churn, self.s_min, self.s_max, self.s_noise)
        return sched, churn


def _resolve_guidance(guidance: GuidanceConfig, sampler: SamplerConfig, n_steps: int) -> GuidanceConfig:
    xi = guidance.xi if guidance.xi is not None else (2.0 if sampler.iva_init else 6.0)
    if guidance.n_ref > n_steps or guidance.n_fg > n_steps:
        raise ValueError(f"n_ref and n_fg must not exceed n_steps={n_steps}")
    return replace(guidance, xi=xi)


@dataclass
class SeparationContext:
    """Everything about the mixture that stays fixed during sampling."""

    x: np.ndarray  # (C, T)
    n_sources: int
    X: np.ndarray  # (C, L, n_bins) under the FCP geometry
    weights: np.ndarray  # (L, n_bins)
    stft_cfg: StftConfig
    iva_sources: np.ndarray | None = None  # (K, T) reference-channel IVA estimates
    iva_filters: FilterTaps | None = None  # (K, C, n_bins, taps)

    @property
    def length(self) -> int:
        return self.x.shape[-1]


def prepare(x, n_sources: int, sampler: SamplerConfig, guidance: GuidanceConfig) -> SeparationContext:
    """STFT the mixture, and run IVA plus filter initialisation when enabled.

    With more microphones than sources, IVA runs on the first ``n_sources``
    channels; its filters still cover every channel.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValueError("mixture contains non-finite values")
    C, _ = x.shape
    if n_sources < 1:
        raise ValueError("n_sources must be >= 1")
    X = stft(x, sampler.stft)
    weights = fcp_weights(X, guidance.fcp.eps)
    ctx = SeparationContext(x, n_sources, X, weights, sampler.stft)
    if sampler.iva_init:
        if C < 2 or n_sources < 2 or n_sources > C:
            raise ValueError(
                f"IVA initialisation needs 2 <= n_sources <= channels, got K={n_sources}, C={C}"
            )
        s_iva = iva_separate_waveform(x, sampler.iva, n_sources)
        ctx.iva_sources = s_iva
        ctx.iva_filters = iva_init_filters(X, stft(s_iva, sampler.stft), guidance.fcp)
    return ctx


@dataclass
class ScoreTerms:
    score: np.ndarray
    denoised: np.ndarray
    residual_norm: float | None  # multichannel ||x - x_hat|| at the denoised estimate (None if unguided)
    ref_residual_norm: float
    likelihood_grad_norm: float  # raw, before normalisation
    guidance_norm: float  # of the total guidance added to the prior score
    filters: str  # "iva", "fcp", or "none" without likelihood guidance
    diagnostics: list[str] = field(default_factory=list)


def _filters_for(ctx, S0, use_iva: bool, fcp_cfg: FcpConfig, diagnostics: list[str]) -> FilterTaps:
    taps = []
    for k in range(S0.shape[0]):
        if use_iva:
            taps.append(ctx.iva_filters.taps[k])
            continue
        try:
            taps.append(fcp_estimate(ctx.X, S0[k], ctx.weights, fcp_cfg).taps)
        except DegenerateRegressorError:
            if ctx.iva_filters is not None:
                taps.append(ctx.iva_filters.taps[k])
                diagnostics.append(f"source {k}: silent estimate, using IVA filters")
            else:
                taps.append(np.zeros((ctx.X.shape[0], *ctx.X.shape[2:], fcp_cfg.n_taps), dtype=complex))
                diagnostics.append(f"source {k}: silent estimate, using zero filters")
    return FilterTaps(np.stack(taps), fcp_cfg.future_taps, fcp_cfg.past_taps)


def likelihood_loss(ctx: SeparationContext, s0: np.ndarray, G: FilterTaps) -> float:
    """``sum_c ||x_c - sum_k istft(G_kc * STFT(s0_k))||^2`` with the filters held fixed."""
    x_hat = istft(mix_filters(G, stft(s0, ctx.stft_cfg)), ctx.stft_cfg, ctx.length)
    return float(np.sum((ctx.x - x_hat) ** 2))


def estimate_filters(ctx: SeparationContext, s0: np.ndarray, step: int, guidance: GuidanceConfig) -> FilterTaps:
    """The ``(K, C, n_bins, taps)`` filters a score evaluation at ``step`` would use."""
    use_iva = ctx.iva_filters is not None and step <= guidance.n_fg
    return _filters_for(ctx, stft(s0, ctx.stft_cfg), use_iva, guidance.fcp, [])


def frozen_likelihood(ctx, s_tau, sigma: float, denoiser: Denoiser, G: FilterTaps) -> tuple[float, np.ndarray]:
    """Mixture loss at ``D(s_tau, sigma)`` under fixed filters, and its gradient in ``s_tau``."""
    s0 = denoiser.apply(s_tau, sigma)
    grad0, _ = _likelihood_grad(ctx, stft(s0, ctx.stft_cfg), G)
    return likelihood_loss(ctx, s0, G), denoiser.vjp(s_tau, sigma, grad0)


def _likelihood_grad(ctx, S0, G) -> tuple[np.ndarray, float]:
    """Gradient of :func:`likelihood_loss` in the denoised sources, and the residual norm."""
    cfg = ctx.stft_cfg
    resid = ctx.x - istft(mix_filters(G, S0), cfg, ctx.length)
    R = istft_adjoint(-2.0 * resid, cfg)  # (C, L, n_bins)
    back = mix_filters_adjoint(G, R)  # (K, L, n_bins)
    return stft_adjoint(back, cfg, ctx.length), float(np.linalg.norm(resid))


def _normalised(grad: np.ndarray, target_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm == 0.0:
        return np.zeros_like(grad)
    return grad * (target_norm / norm)


def posterior_score(
    s_tau: np.ndarray,
    ctx: SeparationContext,
    step: int,
    sigma: float,
    denoiser: Denoiser,
    guidance: GuidanceConfig,
) -> ScoreTerms:
    """Prior score plus normalised likelihood and reference-channel guidance.

    The filters are treated as constants when differentiating.  IVA filters
    are used while ``step <= n_fg`` (when available), FCP filters afterwards.
    """
    if not sigma > 0:
        raise ValueError("posterior score needs sigma > 0")
    xi = 0.0 if guidance.xi is None else guidance.xi
    s0 = denoiser.apply(s_tau, sigma)
    score = (s0 - s_tau) / sigma**2
    T = ctx.length
    scale = xi * math.sqrt(T) / sigma

    diagnostics: list[str] = []
    use_iva = ctx.iva_filters is not None and step <= guidance.n_fg
    ref_resid = ctx.x[0] - s0.sum(axis=0)
    raw_norm = 0.0
    resid_norm = None
    guide = np.zeros_like(score)
    if xi > 0:
        S0 = stft(s0, ctx.stft_cfg)
        G = _filters_for(ctx, S0, use_iva, guidance.fcp, diagnostics)
        grad0, resid_norm = _likelihood_grad(ctx, S0, G)
        g = denoiser.vjp(s_tau, sigma, grad0)
        raw_norm = float(np.linalg.norm(g))
        guide -= _normalised(g, scale)
        if step <= guidance.n_ref and guidance.lam > 0:
            r = denoiser.vjp(s_tau, sigma, np.broadcast_to(-2.0 * ref_resid, s0.shape))
            guide -= guidance.lam * _normalised(r, scale)
    return ScoreTerms(
        score=score + guide,
        denoised=s0,
        residual_norm=resid_norm,
        ref_residual_norm=float(np.linalg.norm(ref_resid)),
        likelihood_grad_norm=raw_norm,
        guidance_norm=float(np.linalg.norm(guide)),
        filters=("iva" if use_iva else "fcp") if xi > 0 else "none",
        diagnostics=diagnostics,
    )


@dataclass
class SeparationResult:
    virtual_sources: np.ndarray  # (K, T)
    ref_images: np.ndarray  # (K, T) estimates of the channel-1 images
    recon_snr_db: float
    seed: int
    trace: list[dict] | None = None
    iva_sources: np.ndarray | None = None

    def trace_json(self) -> dict:
        return {"seed": self.seed, "recon_snr_db": self.recon_snr_db, "steps": self.trace or []}


def _gaussian(seed: int, tag: int, step: int, k: int, shape) -> np.ndarray:
    return np.random.default_rng([seed, tag, step, k]).standard_normal(shape)


def _per_source_noise(seed, tag, step, K, T) -> np.ndarray:
    return np.stack([_gaussian(seed, tag, step, k, T) for k in range(K)])


def _trace_row(i, sigma, sigma_hat, terms: ScoreTerms) -> dict:
    return {
        "step": i,
        "sigma": sigma,
        "sigma_hat": sigma_hat,
        "residual_norm": terms.residual_norm,
        "ref_residual_norm": terms.ref_residual_norm,
        "likelihood_grad_norm": terms.likelihood_grad_norm,
        "guidance_norm": terms.guidance_norm,
        "filters": terms.filters,
        "diagnostics": terms.diagnostics,
    }


def _run(ctx, denoiser, sampler, guidance, seed, trace) -> SeparationResult:
    sched, churn = sampler.schedules()
    guidance = _resolve_guidance(guidance, sampler, sched.n_steps)
    sig = sched.sigmas
    K, T = ctx.n_sources, ctx.length
    seed = int(seed)

    mean = ctx.iva_sources if ctx.iva_sources is not None else np.zeros((K, T))
    s = mean + sig[0] * _per_source_noise(seed, _TAG_INIT, 0, K, T)
    rows = [] if trace else None

    for i in range(sched.n_steps):
        gamma = churn.gammas[i]
        sigma_hat = sig[i] + gamma * sig[i]
        if gamma > 0:
            eps = churn.s_noise * _per_source_noise(seed, _TAG_CHURN, i, K, T)
            s_hat = s + math.sqrt(sigma_hat**2 - sig[i] ** 2) * eps
        else:
            s_hat = s
        terms = posterior_score(s_hat, ctx, i, sigma_hat, denoiser, guidance)
        d = -sigma_hat * terms.score
        s = s_hat + (sig[i + 1] - sigma_hat) * d
        if sig[i + 1] != 0:
            terms2 = posterior_score(s, ctx, i + 1, sig[i + 1], denoiser, guidance)
            d2 = -sig[i + 1] * terms2.score
            s = s_hat + 0.5 * (sig[i + 1] - sigma_hat) * (d + d2)
        if not np.all(np.isfinite(s)):
            raise SamplerError(f"non-finite sampler state at step {i}")
        if rows is not None:
            rows.append(_trace_row(i, float(sig[i]), float(sigma_hat), terms))

    ref_images = _project_to_reference(ctx, s, guidance.fcp)
    return SeparationResult(
        virtual_sources=s,
        ref_images=ref_images,
        recon_snr_db=recon_snr(ctx.x[0], ref_images),
        seed=seed,
        trace=rows,
        iva_sources=ctx.iva_sources,
    )


def _project_to_reference(ctx, s, fcp_cfg) -> np.ndarray:
    S = stft(s, ctx.stft_cfg)
    out = np.zeros_like(s)
    for k in range(s.shape[0]):
        try:
            G = fcp_estimate(ctx.X[0], S[k], ctx.weights, fcp_cfg)
        except DegenerateRegressorError:
            continue  # a silent virtual source has a silent image
        out[k] = istft(apply_filter(G, S[k]), ctx.stft_cfg, ctx.length)
    return out


def separate(
    x,
    n_sources: int,
    denoiser: Denoiser,
    sampler: SamplerConfig = SamplerConfig(),
    guidance: GuidanceConfig = GuidanceConfig(),
    seed: int = 0,
    trace: bool = False,
    context: SeparationContext | None = None,
) -> SeparationResult:
    """Sample virtual sources for the ``(C, T)`` mixture ``x`` and map them to channel 1.

    ``context`` lets callers reuse a :func:`prepare` result (and its IVA run)
    across several samples of the same mixture.
    """
    ctx = context if context is not None else prepare(x, n_sources, sampler, guidance)
    return _run(ctx, denoiser, sampler, guidance, seed, trace)


def separate_best_of(
    x,
    n_sources: int,
    denoiser: Denoiser,
    sampler: SamplerConfig = SamplerConfig(),
    guidance: GuidanceConfig = GuidanceConfig(),
    seed: int = 0,
    n_samples: int = 5,
    trace: bool = False,
) -> tuple[SeparationResult, list[float]]:
    """Draw ``n_samples`` (seeds ``seed, seed+1, ...``) and keep the best mixture fit.

    Returns the selected result and the reconstruction SNR of every sample.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    ctx = prepare(x, n_sources, sampler, guidance)
    results = [_run(ctx, denoiser, sampler, guidance, seed + j, trace) for j in range(n_samples)]
    snrs = [r.recon_snr_db for r in results]
    return results[int(np.argmax(snrs))], snrs
