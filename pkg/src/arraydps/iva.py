"""Auxiliary-function IVA with iterative-projection updates (determined case).

Spectrograms are stacked as ``(C, L, n_bins)``.  Demixing matrices are
``(n_bins, K, C)`` with rows ``w_k^H`` so that ``y_k(l, f) = W[f, k] @ x(l, f)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import StftConfig, istft, stft
from .fcp import FcpConfig, FilterTaps, fcp_estimate, fcp_weights

__all__ = [
    "IvaConfig",
    "IvaResult",
    "auxiva",
    "iva_objective",
    "projection_back",
    "iva_separate",
    "iva_separate_waveform",
    "iva_init_filters",
]

_R_FLOOR = 1e-12
# smoothing of the contrast relative to the mean frame energy of the input
_DELTA_REL = 1e-10


@dataclass(frozen=True)
class IvaConfig:
    prior: str = "gauss"
    iterations: int = 100
    stft: StftConfig = field(default_factory=lambda: StftConfig(2048, 256))

    def __post_init__(self):
        if self.prior not in ("gauss", "laplace"):
            raise ValueError(f"prior must be 'gauss' or 'laplace', got {self.prior!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class IvaResult:
    sources: np.ndarray  # (K, L, n_bins), not yet scaled to any microphone
    demixing: np.ndarray  # (n_bins, K, C)
    objective: list[float]


def _smoothing(X: np.ndarray) -> float:
    return _DELTA_REL * float(np.mean(np.abs(X) ** 2)) * X.shape[2] + _R_FLOOR


def _contrast(r2: np.ndarray, prior: str, n_bins: int, delta2: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``G(r)`` and the auxiliary weight ``G'(r) / r`` from ``r^2``.

    Both contrasts are concave in ``r^2 + delta2``, which keeps the quadratic
    majoriser exact; ``delta2`` only tames silent frames.
    """
    q = r2 + delta2
    if prior == "laplace":
        return np.sqrt(q), 1.0 / np.sqrt(q)
    # time-varying complex Gaussian, per-frame variance profiled out:
    # G(r) = n_bins * log(r), halved along with the complex log|det W|^2 term
    return 0.5 * n_bins * np.log(q), n_bins / q


def iva_objective(X: np.ndarray, W: np.ndarray, prior: str = "gauss", delta2: float | None = None) -> float:
    """``mean_l sum_k G(||y_k(l)||) - sum_f log|det W_f|``."""
    if delta2 is None:
        delta2 = _smoothing(X)
    return _objective(W @ X.transpose(2, 0, 1), W, prior, delta2)


def _objective(Y: np.ndarray, W: np.ndarray, prior: str, delta2: float) -> float:
    # Y is (n_bins, K, L)
    r2 = (Y.real**2 + Y.imag**2).sum(axis=0)
    g, _ = _contrast(r2, prior, Y.shape[0], delta2)
    logdet = np.linalg.slogdet(W)[1]
    return float(g.sum(axis=0).mean() - logdet.sum())


def auxiva(X: np.ndarray, iterations: int = 100, prior: str = "gauss", W0=None) -> IvaResult:
    """Run AuxIVA-IP on ``X`` of shape ``(C, L, n_bins)``; returns unscaled sources."""
    X = np.asarray(X)
    if not np.all(np.isfinite(X)):
        raise ValueError("IVA input contains non-finite values")
    C, L, Fb = X.shape
    if C < 2:
        raise ValueError("IVA needs at least two channels")
    K = C
    W = np.tile(np.eye(K, dtype=complex), (Fb, 1, 1)) if W0 is None else np.array(W0, dtype=complex)
    Xf = np.ascontiguousarray(X.transpose(2, 0, 1))  # (Fb, C, L)
    XfH = Xf.conj().transpose(0, 2, 1)
    eye = np.eye(K)

    delta2 = _smoothing(X)
    history = [_objective(W @ Xf, W, prior, delta2)]
    for _ in range(iterations):
        for k in range(K):
            y = (W[:, k, None, :] @ Xf)[:, 0]  # demix source k only, (Fb, L)
            r2 = (y.real**2 + y.imag**2).sum(axis=0)
            _, phi = _contrast(r2, prior, Fb, delta2)
            V = (Xf * phi) @ XfH / L  # (Fb, C, C)
            # minimises w^H V w / 2 - log|det W| in w_k = W[:, k]^H
            # (rows of W are w^H)
            w = np.linalg.solve(W @ V, np.broadcast_to(eye[:, k], (Fb, K))[..., None])[..., 0]
            denom = np.einsum("fc,fcd,fd->f", w.conj(), V, w).real
            w = w / np.sqrt(np.maximum(denom, _R_FLOOR))[:, None]
            W[:, k] = w.conj()
        history.append(_objective(W @ Xf, W, prior, delta2))

    Y = (W @ Xf).transpose(1, 2, 0)
    return IvaResult(Y, W, history)


def projection_back(Y: np.ndarray, W: np.ndarray, ref: int = 0) -> np.ndarray:
    """Scale each source to its minimal-distortion image at microphone ``ref``."""
    A = np.linalg.inv(W)  # (Fb, C, K)
    return Y * A[:, ref, :].T[:, None, :]


def iva_separate(X: np.ndarray, cfg: IvaConfig = IvaConfig(), n_sources: int | None = None) -> np.ndarray:
    """Separate ``(C, L, n_bins)`` mixture spectrograms into reference-channel images.

    Over-determined input (``C > n_sources``) keeps the first ``n_sources``
    channels.
    """
    X = np.asarray(X)
    C = X.shape[0]
    K = C if n_sources is None else n_sources
    if C < 2 or K < 2:
        raise ValueError("IVA needs at least two channels and two sources")
    if K > C:
        raise ValueError(f"cannot separate {K} sources from {C} channels")
    res = auxiva(X[:K], cfg.iterations, cfg.prior)
    return projection_back(res.sources, res.demixing)


def iva_separate_waveform(x: np.ndarray, cfg: IvaConfig = IvaConfig(), n_sources: int | None = None) -> np.ndarray:
    """Time-domain wrapper: ``(C, T)`` mixture to ``(K, T)`` reference-channel images."""
    x = np.asarray(x, dtype=float)
    X = stft(x, cfg.stft)
    return istft(iva_separate(X, cfg, n_sources), cfg.stft, x.shape[-1])


def iva_init_filters(X: np.ndarray, S_iva: np.ndarray, fcp_cfg: FcpConfig = FcpConfig()) -> FilterTaps:
    """Relative filters from each IVA output to every channel, ``(K, C, n_bins, taps)``.

    Both inputs must use the FCP STFT geometry, not the IVA one.
    """
    X = np.asarray(X)
    weights = fcp_weights(X, fcp_cfg.eps)
    taps = [fcp_estimate(X, S_iva[k], weights, fcp_cfg).taps for k in range(S_iva.shape[0])]
    return FilterTaps(np.stack(taps), fcp_cfg.future_taps, fcp_cfg.past_taps)
