"""SI-SDR, filtered-projection SDR and permutation-invariant evaluation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, signal

__all__ = [
    "CLAMP_DB",
    "SourceMetrics",
    "EvalReport",
    "si_sdr",
    "sdr_filtered",
    "align_and_eval",
    "recon_snr",
]

CLAMP_DB = 100.0
MAX_PIT_SOURCES = 6


def _ratio_db(signal_energy: float, noise_energy: float) -> float:
    if noise_energy <= signal_energy * 10.0 ** (-CLAMP_DB / 10.0):
        return CLAMP_DB
    return float(10.0 * np.log10(signal_energy / noise_energy))


def _pair(est, ref) -> tuple[np.ndarray, np.ndarray]:
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if est.shape != ref.shape or est.ndim != 1:
        raise ValueError(f"expected equal-length 1-D signals, got {est.shape} and {ref.shape}")
    if not np.any(ref):
        raise ValueError("reference signal is identically zero")
    return est, ref


def si_sdr(est, ref) -> float:
    """Scale-invariant SDR in dB, clamped at +100 dB."""
    est, ref = _pair(est, ref)
    alpha = np.dot(est, ref) / np.dot(ref, ref)
    target = alpha * ref
    return _ratio_db(np.dot(target, target), np.sum((est - target) ** 2))


def _delayed_gram(ref: np.ndarray, taps: int) -> np.ndarray:
    """Gram matrix of ``ref`` delayed by ``0..taps-1`` and truncated to ``len(ref)``."""
    T = ref.size
    G = np.empty((taps, taps))
    for d in range(taps):
        # G[i, i + d] = sum_{u <= T-1-i-d} ref[u] ref[u + d]
        partial = np.cumsum(ref[: T - d] * ref[d:])
        i = np.arange(taps - d)
        G[i, i + d] = G[i + d, i] = partial[T - 1 - d - i]
    return G


def sdr_filtered(est, ref, taps: int = 512) -> float:
    """SDR allowing a ``taps``-long FIR distortion of the reference.

    The target component is the least-squares projection of ``est`` onto
    delayed copies of ``ref``; with ``taps=1`` this is exactly SI-SDR.
    """
    est, ref = _pair(est, ref)
    if taps < 1:
        raise ValueError("taps must be >= 1")
    taps = min(taps, ref.size)
    gram = _delayed_gram(ref, taps)
    xcorr = signal.correlate(est, ref, mode="full", method="fft")[ref.size - 1 : ref.size - 1 + taps]
    try:
        coef = linalg.solve(gram, xcorr, assume_a="pos")
    except linalg.LinAlgError as exc:
        raise ValueError("singular projection: reference has no usable energy") from exc
    target = signal.oaconvolve(ref, coef)[: ref.size]
    return _ratio_db(np.dot(target, target), np.sum((est - target) ** 2))


def recon_snr(mixture, images) -> float:
    """``10 log10(||x||^2 / ||x - sum_k images_k||^2)`` for a reference mixture."""
    mixture = np.asarray(mixture, dtype=float)
    resid = mixture - np.sum(images, axis=0)
    return _ratio_db(np.dot(mixture, mixture), np.dot(resid, resid))


@dataclass
class SourceMetrics:
    si_sdr_db: float
    sdr_db: float | None = None


@dataclass
class EvalReport:
    per_source: list[SourceMetrics]
    permutation: list[int]  # permutation[k] is the estimate index matched to reference k
    recon_snr_db: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def mean_si_sdr(self) -> float:
        return float(np.mean([m.si_sdr_db for m in self.per_source]))

    def to_json(self) -> dict:
        return {
            "per_source": [
                {"si_sdr_db": m.si_sdr_db, "sdr_db": m.sdr_db} for m in self.per_source
            ],
            "permutation": list(self.permutation),
            "recon_snr_db": self.recon_snr_db,
            "mean_si_sdr_db": self.mean_si_sdr,
            **self.extra,
        }


def align_and_eval(est, ref, with_sdr: bool = False, sdr_taps: int = 512) -> EvalReport:
    """Pick the estimate-to-reference assignment maximising mean SI-SDR.

    All ``K!`` assignments are scored, so ``K`` is capped at 6.
    """
    est = [np.asarray(e, dtype=float) for e in est]
    ref = [np.asarray(r, dtype=float) for r in ref]
    K = len(ref)
    if len(est) != K:
        raise ValueError(f"{len(est)} estimates for {K} references")
    if K > MAX_PIT_SOURCES:
        raise ValueError(f"permutation search over {K}! assignments refused (max {MAX_PIT_SOURCES})")
    table = np.array([[si_sdr(e, r) for e in est] for r in ref])  # [ref, est]
    best = max(itertools.permutations(range(K)), key=lambda p: table[np.arange(K), list(p)].mean())
    per_source = []
    for k, j in enumerate(best):
        sdr = sdr_filtered(est[j], ref[k], sdr_taps) if with_sdr else None
        per_source.append(SourceMetrics(float(table[k, j]), sdr))
    return EvalReport(per_source, list(best))
